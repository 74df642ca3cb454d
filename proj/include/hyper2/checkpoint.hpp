#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyper2/graph.hpp"
#include "hyper2/model.hpp"
#include "hyper2/train.hpp"

// Checkpoint container: magic header, version, then length-prefixed named
// sections. Integral metadata travels as JSON; parameter tables are raw
// little-endian 64-bit floats so a load reproduces scores bit-exactly.
// Saves go through a temp file and an atomic rename.

namespace hyper2 {

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  TrainConfig train_cfg;
  ScoreConfig score_cfg;
  std::string rng_state;
  double best_val_mrr = std::numeric_limits<double>::quiet_NaN();
  int64_t epochs_done = 0;
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'H', 'Y', 'P', 'R', '2', 'C', 'K', 'P'};
inline constexpr uint32_t kCkptVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

struct ByteWriter {
  std::string buf;

  void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(const Vec& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
};

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw data_error("checkpoint: truncated section");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  Vec doubles() {
    const uint64_t n = u64();
    if (pos + n * sizeof(double) > buf.size())
      throw data_error("checkpoint: truncated table");
    Vec v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  bool done() const { return pos >= buf.size(); }
};

inline nlohmann::json meta_json(const Checkpoint& c) {
  nlohmann::json j;
  j["dim"] = c.params.dim;
  j["n_entities"] = c.params.n_entities;
  j["n_relations"] = c.params.n_relations;
  j["curvature"] = c.params.curv.k;
  j["epochs_done"] = c.epochs_done;
  if (!std::isnan(c.best_val_mrr)) j["best_val_mrr"] = c.best_val_mrr;
  j["train"] = {{"eta", c.train_cfg.eta},
                {"beta", c.train_cfg.beta},
                {"nneg", c.train_cfg.nneg},
                {"nepoch", c.train_cfg.nepoch},
                {"patience", c.train_cfg.patience},
                {"eval_every", c.train_cfg.eval_every},
                {"seed", c.train_cfg.seed},
                {"neg_mode", to_string(c.train_cfg.neg_mode)},
                {"workers", c.train_cfg.workers}};
  j["score"] = {{"variant", to_string(c.score_cfg.variant)},
                {"combine", to_string(c.score_cfg.combine)},
                {"reduce", to_string(c.score_cfg.reduce)}};
  return j;
}

inline void apply_meta(Checkpoint& c, const nlohmann::json& j) {
  c.params.dim = j.at("dim").get<int32_t>();
  c.params.n_entities = j.at("n_entities").get<int32_t>();
  c.params.n_relations = j.at("n_relations").get<int32_t>();
  c.params.curv = Curvature(j.at("curvature").get<double>());
  c.epochs_done = j.at("epochs_done").get<int64_t>();
  c.best_val_mrr = j.contains("best_val_mrr") ? j["best_val_mrr"].get<double>()
                                              : std::numeric_limits<double>::quiet_NaN();
  const auto& tr = j.at("train");
  c.train_cfg.eta = tr.at("eta").get<double>();
  c.train_cfg.beta = tr.at("beta").get<int32_t>();
  c.train_cfg.nneg = tr.at("nneg").get<int32_t>();
  c.train_cfg.nepoch = tr.at("nepoch").get<int32_t>();
  c.train_cfg.patience = tr.at("patience").get<int32_t>();
  c.train_cfg.eval_every = tr.at("eval_every").get<int32_t>();
  c.train_cfg.seed = tr.at("seed").get<uint64_t>();
  c.train_cfg.neg_mode = negative_mode_from_string(tr.at("neg_mode").get<std::string>());
  c.train_cfg.workers = tr.at("workers").get<int32_t>();
  const auto& sc = j.at("score");
  c.score_cfg.variant = scoring_variant_from_string(sc.at("variant").get<std::string>());
  c.score_cfg.combine = agg_combine_from_string(sc.at("combine").get<std::string>());
  c.score_cfg.reduce = agg_reduce_from_string(sc.at("reduce").get<std::string>());
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  using detail::ByteWriter;

  ByteWriter meta;
  meta.str(detail::meta_json(c).dump());

  ByteWriter vocab;
  vocab.u64(c.vocab.entities.size());
  for (const auto& e : c.vocab.entities) vocab.str(e);
  vocab.u64(c.vocab.relations.size());
  for (const auto& r : c.vocab.relations) vocab.str(r);
  vocab.u32(static_cast<uint32_t>(c.vocab.n_base_relations));
  vocab.u32(c.vocab.has_reciprocals ? 1 : 0);

  ByteWriter tables;
  tables.doubles(c.params.entity_emb);
  tables.doubles(c.params.rel_emb);
  tables.doubles(c.params.rel_diag_head);
  tables.doubles(c.params.rel_diag_tail);
  tables.doubles(c.params.bias_head);
  tables.doubles(c.params.bias_tail);

  ByteWriter rng;
  rng.str(c.rng_state);

  ByteWriter file;
  file.raw(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  file.u32(detail::kCkptVersion);
  auto section = [&file](const char* name, const std::string& payload) {
    file.str(name);
    file.u64(payload.size());
    file.raw(payload.data(), payload.size());
  };
  section("meta", meta.buf);
  section("vocab", vocab.buf);
  section("tables", tables.buf);
  section("rng", rng.buf);

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write checkpoint: " + tmp.string());
    out.write(file.buf.data(), static_cast<std::streamsize>(file.buf.size()));
    if (!out) throw data_error("short write while saving checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint: " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  detail::ByteReader r{blob};
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw data_error("not a checkpoint file: " + path.string());
  const uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw data_error("unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  bool have_meta = false, have_vocab = false, have_tables = false, have_rng = false;
  while (!r.done()) {
    const std::string name = r.str();
    const uint64_t len = r.u64();
    if (r.pos + len > blob.size()) throw data_error("checkpoint: truncated section " + name);
    const std::string payload = blob.substr(r.pos, len);
    r.pos += len;

    detail::ByteReader s{payload};
    if (name == "meta") {
      try {
        detail::apply_meta(c, nlohmann::json::parse(s.str()));
      } catch (const data_error&) {
        throw;
      } catch (const std::exception& e) {
        throw data_error("checkpoint: malformed meta section: " + std::string(e.what()));
      }
      have_meta = true;
    } else if (name == "vocab") {
      const uint64_t ne = s.u64();
      c.vocab.entities.reserve(ne);
      for (uint64_t i = 0; i < ne; ++i) c.vocab.add_entity(s.str());
      const uint64_t nr = s.u64();
      c.vocab.relations.reserve(nr);
      for (uint64_t i = 0; i < nr; ++i) c.vocab.add_relation(s.str());
      c.vocab.n_base_relations = static_cast<int32_t>(s.u32());
      c.vocab.has_reciprocals = s.u32() != 0;
      have_vocab = true;
    } else if (name == "tables") {
      c.params.entity_emb = s.doubles();
      c.params.rel_emb = s.doubles();
      c.params.rel_diag_head = s.doubles();
      c.params.rel_diag_tail = s.doubles();
      c.params.bias_head = s.doubles();
      c.params.bias_tail = s.doubles();
      have_tables = true;
    } else if (name == "rng") {
      c.rng_state = s.str();
      have_rng = true;
    }
    // unknown sections are skipped for forward compatibility
  }
  if (!have_meta || !have_vocab || !have_tables || !have_rng)
    throw data_error("checkpoint missing required sections: " + path.string());

  const auto expect = [&](std::size_t got, std::size_t want, const char* table) {
    if (got != want)
      throw data_error(std::string("checkpoint table size mismatch for ") + table + ": got " +
                       std::to_string(got) + ", expected " + std::to_string(want));
  };
  const std::size_t ed = std::size_t(c.params.n_entities) * c.params.dim;
  const std::size_t rd = std::size_t(c.params.n_relations) * c.params.dim;
  expect(c.params.entity_emb.size(), ed, "entity_emb");
  expect(c.params.rel_emb.size(), rd, "rel_emb");
  expect(c.params.rel_diag_head.size(), rd, "rel_diag_head");
  expect(c.params.rel_diag_tail.size(), rd, "rel_diag_tail");
  expect(c.params.bias_head.size(), c.params.n_entities, "bias_head");
  expect(c.params.bias_tail.size(), c.params.n_entities, "bias_tail");
  if (c.vocab.num_entities() != c.params.n_entities ||
      c.vocab.num_relations() != c.params.n_relations)
    throw data_error("checkpoint vocabulary does not match parameter tables");
  return c;
}

// Hard error naming the divergent counts when a dataset directory was built
// from a different vocabulary than the checkpoint.
inline void require_vocab_match(const Vocabulary& data_vocab, const Vocabulary& ckpt_vocab) {
  const int32_t data_rel = data_vocab.has_reciprocals ? data_vocab.n_base_relations
                                                      : data_vocab.num_relations();
  if (data_vocab.num_entities() != ckpt_vocab.num_entities() ||
      data_rel != ckpt_vocab.n_base_relations)
    throw data_error(
        "vocabulary mismatch: dataset has " + std::to_string(data_vocab.num_entities()) +
        " entities / " + std::to_string(data_rel) + " base relations, checkpoint has " +
        std::to_string(ckpt_vocab.num_entities()) + " / " +
        std::to_string(ckpt_vocab.n_base_relations));
  for (int32_t i = 0; i < data_vocab.num_entities(); ++i)
    if (data_vocab.entities[i] != ckpt_vocab.entities[i])
      throw data_error("vocabulary mismatch at entity index " + std::to_string(i) + ": \"" +
                       data_vocab.entities[i] + "\" vs \"" + ckpt_vocab.entities[i] + "\"");
  for (int32_t i = 0; i < data_rel; ++i)
    if (data_vocab.relations[i] != ckpt_vocab.relations[i])
      throw data_error("vocabulary mismatch at relation index " + std::to_string(i) + ": \"" +
                       data_vocab.relations[i] + "\" vs \"" + ckpt_vocab.relations[i] + "\"");
}

}  // namespace hyper2
