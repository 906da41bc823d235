// Experiment configuration: a flat, sectioned key = value text format with
// documented defaults for every field. Unknown keys are rejected so silently
// misspelled experiments cannot run. `method`, `mode` and `alpha` accept
// comma-separated lists and expand into a Cartesian experiment grid; `seeds`
// is always a list. The FCL_SEED_OVERRIDE environment variable replaces the
// seed list without touching the config file.
#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fcl/data.hpp"
#include "fcl/federation.hpp"
#include "fcl/losses.hpp"
#include "fcl/model.hpp"

namespace fcl {

enum class LpMode { full_labels, labelled_subset };

inline const char* lp_mode_name(LpMode m) {
  return m == LpMode::full_labels ? "full_labels" : "labelled_subset";
}

struct ExperimentConfig {
  // [dataset]
  int num_classes = 10;
  int dim = 16;
  int n_per_class = 200;
  double class_separation = 1.2;
  double test_fraction = 0.2;
  AugmentSpec aug;

  // [partition]
  std::vector<PartitionMode> modes{PartitionMode::label_skew};
  std::vector<double> alphas{0.1};
  int num_clients = 20;
  int num_rotation_bins = 10;
  double labelled_fraction = 1.0;

  // [model]
  ModelDims dims;  // input_dim is taken from the dataset section

  // [train]
  FederationConfig fed;  // method and seed are filled per grid point
  std::vector<Method> methods{Method::federated_simclr};
  int checkpoint_every = 0;  // rounds between checkpoints; 0 disables

  // [eval]
  int eval_cadence = 50;
  int lp_epochs = 20;
  double lp_lr = 0.1;
  LpMode lp_mode = LpMode::full_labels;

  // [run]
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("config: dataset.num_classes must be >= 2");
    if (dim < 2) throw std::invalid_argument("config: dataset.dim must be >= 2");
    if (n_per_class < 1) throw std::invalid_argument("config: dataset.n_per_class must be >= 1");
    if (class_separation <= 0.0) {
      throw std::invalid_argument("config: dataset.class_separation must be > 0");
    }
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
      throw std::invalid_argument("config: dataset.test_fraction must be in [0, 1)");
    }
    aug.validate();
    if (modes.empty()) throw std::invalid_argument("config: partition.mode list is empty");
    if (alphas.empty()) throw std::invalid_argument("config: partition.alpha list is empty");
    for (double a : alphas) {
      if (a <= 0.0) throw std::invalid_argument("config: partition.alpha must be > 0");
    }
    if (num_clients < 1) throw std::invalid_argument("config: partition.num_clients must be >= 1");
    if (num_rotation_bins < 1) {
      throw std::invalid_argument("config: partition.num_rotation_bins must be >= 1");
    }
    if (labelled_fraction < 0.0 || labelled_fraction > 1.0) {
      throw std::invalid_argument("config: partition.labelled_fraction must be in [0, 1]");
    }
    if (methods.empty()) throw std::invalid_argument("config: train.method list is empty");
    FederationConfig probe_cfg = fed;
    probe_cfg.validate(num_clients);
    if (checkpoint_every < 0) {
      throw std::invalid_argument("config: train.checkpoint_every must be >= 0");
    }
    if (eval_cadence < 0) throw std::invalid_argument("config: eval.cadence must be >= 0");
    if (lp_epochs < 0) throw std::invalid_argument("config: eval.lp_epochs must be >= 0");
    if (lp_lr < 0.0) throw std::invalid_argument("config: eval.lp_lr must be >= 0");
    if (seeds.empty()) throw std::invalid_argument("config: run.seeds list is empty");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) out.push_back("");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

inline long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long n = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return n;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer value for " + key + ": '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean value for " + key + ": '" + v + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("config: malformed section header at line " +
                                    std::to_string(line_no));
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "dataset" && section != "partition" && section != "model" &&
          section != "train" && section != "eval" && section != "run") {
        throw std::invalid_argument("config: unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key = value at line " +
                                  std::to_string(line_no));
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string qual = section + "." + key;

    if (section == "dataset") {
      if (key == "num_classes") cfg.num_classes = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "dim") cfg.dim = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "n_per_class") cfg.n_per_class = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "class_separation") cfg.class_separation = detail::parse_double(qual, value);
      else if (key == "test_fraction") cfg.test_fraction = detail::parse_double(qual, value);
      else if (key == "aug_noise_sigma") cfg.aug.noise_sigma = detail::parse_double(qual, value);
      else if (key == "aug_mask_prob") cfg.aug.mask_prob = detail::parse_double(qual, value);
      else if (key == "aug_scale_min") cfg.aug.scale_min = detail::parse_double(qual, value);
      else if (key == "aug_scale_max") cfg.aug.scale_max = detail::parse_double(qual, value);
      else throw std::invalid_argument("config: unknown key '" + qual + "'");
    } else if (section == "partition") {
      if (key == "mode") {
        cfg.modes.clear();
        for (const std::string& item : detail::split_list(value)) {
          const auto m = parse_partition_mode(item);
          if (!m) throw std::invalid_argument("config: unknown partition mode '" + item + "'");
          cfg.modes.push_back(*m);
        }
      } else if (key == "alpha") {
        cfg.alphas.clear();
        for (const std::string& item : detail::split_list(value)) {
          cfg.alphas.push_back(detail::parse_double(qual, item));
        }
      } else if (key == "num_clients") {
        cfg.num_clients = static_cast<int>(detail::parse_int(qual, value));
      } else if (key == "num_rotation_bins") {
        cfg.num_rotation_bins = static_cast<int>(detail::parse_int(qual, value));
      } else if (key == "labelled_fraction") {
        cfg.labelled_fraction = detail::parse_double(qual, value);
      } else {
        throw std::invalid_argument("config: unknown key '" + qual + "'");
      }
    } else if (section == "model") {
      if (key == "encoder_hidden") cfg.dims.encoder_hidden = static_cast<std::size_t>(detail::parse_int(qual, value));
      else if (key == "z_dim") cfg.dims.z_dim = static_cast<std::size_t>(detail::parse_int(qual, value));
      else if (key == "proj_hidden") cfg.dims.proj_hidden = static_cast<std::size_t>(detail::parse_int(qual, value));
      else if (key == "proj_dim") cfg.dims.proj_dim = static_cast<std::size_t>(detail::parse_int(qual, value));
      else if (key == "predictor_hidden") cfg.dims.predictor_hidden = static_cast<std::size_t>(detail::parse_int(qual, value));
      else throw std::invalid_argument("config: unknown key '" + qual + "'");
    } else if (section == "train") {
      if (key == "rounds") cfg.fed.rounds = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "clients_per_round") cfg.fed.clients_per_round = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "local_epochs") cfg.fed.local_epochs = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "batch_size") cfg.fed.batch_size = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "local_lr") cfg.fed.local_lr = detail::parse_double(qual, value);
      else if (key == "server_lr") cfg.fed.server_lr = detail::parse_double(qual, value);
      else if (key == "adam_beta1") cfg.fed.adam_beta1 = detail::parse_double(qual, value);
      else if (key == "adam_beta2") cfg.fed.adam_beta2 = detail::parse_double(qual, value);
      else if (key == "adam_eps") cfg.fed.adam_eps = detail::parse_double(qual, value);
      else if (key == "uv_weight") cfg.fed.uv_weight = detail::parse_double(qual, value);
      else if (key == "temperature") cfg.fed.temperature = detail::parse_double(qual, value);
      else if (key == "debug_average_server") cfg.fed.debug_average_server = detail::parse_bool(qual, value);
      else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "method") {
        cfg.methods.clear();
        for (const std::string& item : detail::split_list(value)) {
          const auto m = parse_method(item);
          if (!m) throw std::invalid_argument("config: unknown method '" + item + "'");
          cfg.methods.push_back(*m);
        }
      } else {
        throw std::invalid_argument("config: unknown key '" + qual + "'");
      }
    } else if (section == "eval") {
      if (key == "cadence") cfg.eval_cadence = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "lp_epochs") cfg.lp_epochs = static_cast<int>(detail::parse_int(qual, value));
      else if (key == "lp_lr") cfg.lp_lr = detail::parse_double(qual, value);
      else if (key == "lp_mode") {
        if (value == "full_labels") cfg.lp_mode = LpMode::full_labels;
        else if (value == "labelled_subset") cfg.lp_mode = LpMode::labelled_subset;
        else throw std::invalid_argument("config: unknown lp_mode '" + value + "'");
      } else {
        throw std::invalid_argument("config: unknown key '" + qual + "'");
      }
    } else if (section == "run") {
      if (key == "seeds") {
        cfg.seeds.clear();
        for (const std::string& item : detail::split_list(value)) {
          cfg.seeds.push_back(static_cast<std::uint64_t>(detail::parse_int(qual, item)));
        }
      } else {
        throw std::invalid_argument("config: unknown key '" + qual + "'");
      }
    } else {
      throw std::invalid_argument("config: key '" + key + "' outside any section");
    }
  }
  cfg.dims.input_dim = static_cast<std::size_t>(cfg.dim);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// FCL_SEED_OVERRIDE replaces the configured seed list (comma-separated).
inline void apply_seed_override(ExperimentConfig& cfg) {
  const char* env = std::getenv("FCL_SEED_OVERRIDE");
  if (!env || *env == '\0') return;
  std::vector<std::uint64_t> seeds;
  for (const std::string& item : detail::split_list(env)) {
    seeds.push_back(static_cast<std::uint64_t>(detail::parse_int("FCL_SEED_OVERRIDE", item)));
  }
  if (seeds.empty()) throw std::invalid_argument("FCL_SEED_OVERRIDE: no seeds given");
  cfg.seeds = seeds;
}

}  // namespace fcl
