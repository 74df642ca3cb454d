#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hyper2/eval.hpp"
#include "hyper2/model.hpp"
#include "hyper2/train.hpp"

// Flat key = value run configuration. Defaults follow the JF17K settings
// (eta 30, beta 128, nneg 100, 800 epochs, K = 1, d = 50); the wikipeople
// preset switches eta to 80 and the epoch budget to 400. Unknown keys are
// rejected.

namespace hyper2 {

struct RunConfig {
  std::string data_dir;
  std::string out_dir = "out";
  std::string preset;  // "", "jf17k", "wikipeople"
  int32_t dim = 50;
  double curvature = 1.0;
  TrainConfig train;
  ScoreConfig score;
  std::string tasks = "head,tail,relation,affiliated";
  TiePolicy tie = TiePolicy::strict_greater;
};

inline void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "jf17k") {
    cfg.train.eta = 30.0;
    cfg.train.nepoch = 800;
  } else if (name == "wikipeople") {
    cfg.train.eta = 80.0;
    cfg.train.nepoch = 400;
  } else {
    throw config_error("unknown preset: " + name + " (expected jf17k|wikipeople)");
  }
  cfg.preset = name;
}

namespace detail {

inline int32_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int32_t>(x);
  } catch (const std::exception&) {
    throw config_error("bad integer for " + key + ": " + v);
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("bad number for " + key + ": " + v);
  }
}

}  // namespace detail

inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "preset") apply_preset(cfg, value);
  else if (key == "dim") cfg.dim = detail::to_int(key, value);
  else if (key == "curvature") cfg.curvature = detail::to_double(key, value);
  else if (key == "eta") cfg.train.eta = detail::to_double(key, value);
  else if (key == "beta") cfg.train.beta = detail::to_int(key, value);
  else if (key == "nneg") cfg.train.nneg = detail::to_int(key, value);
  else if (key == "nepoch") cfg.train.nepoch = detail::to_int(key, value);
  else if (key == "patience") cfg.train.patience = detail::to_int(key, value);
  else if (key == "eval_every") cfg.train.eval_every = detail::to_int(key, value);
  else if (key == "seed") cfg.train.seed = static_cast<uint64_t>(detail::to_int(key, value));
  else if (key == "workers") cfg.train.workers = detail::to_int(key, value);
  else if (key == "neg_mode") cfg.train.neg_mode = negative_mode_from_string(value);
  else if (key == "scoring_variant") cfg.score.variant = scoring_variant_from_string(value);
  else if (key == "agg_combine") cfg.score.combine = agg_combine_from_string(value);
  else if (key == "agg_reduce") cfg.score.reduce = agg_reduce_from_string(value);
  else if (key == "tasks") cfg.tasks = value;
  else if (key == "tie_policy") cfg.tie = tie_policy_from_string(value);
  else throw config_error("unknown config key: " + key);
}

// key = value lines; '#' comments and blank lines ignored.
inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error(path.string() + ":" + std::to_string(line_no) +
                         ": expected key = value");
    set_config_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

inline std::vector<Task> parse_task_list(const std::string& csv) {
  std::vector<Task> tasks;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t comma = csv.find(',', start);
    if (comma == std::string::npos) comma = csv.size();
    const std::string item = csv.substr(start, comma - start);
    if (!item.empty()) tasks.push_back(task_from_string(item));
    start = comma + 1;
  }
  return tasks;
}

}  // namespace hyper2
