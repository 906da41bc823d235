// One experiment = a Cartesian grid over (method, partition mode, alpha)
// times a list of seeds. Each grid point runs the full pipeline — generate
// data, split, partition, federate, evaluate with a warm-started linear
// probe — and produces a metrics CSV; the grid summary aggregates the final
// test accuracy as mean and standard error over seeds. This lives in a
// header so tests drive exactly the code path the command-line tool runs.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fcl/config.hpp"
#include "fcl/data.hpp"
#include "fcl/evaluation.hpp"
#include "fcl/federation.hpp"
#include "fcl/losses.hpp"
#include "fcl/model.hpp"

namespace fcl {

struct GridPoint {
  Method method = Method::federated_simclr;
  PartitionMode mode = PartitionMode::label_skew;
  double alpha = 0.1;
};

inline std::vector<GridPoint> experiment_grid(const ExperimentConfig& cfg) {
  std::vector<GridPoint> grid;
  for (Method m : cfg.methods) {
    for (PartitionMode mode : cfg.modes) {
      for (double a : cfg.alphas) grid.push_back({m, mode, a});
    }
  }
  return grid;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  double lp_train_acc = 0.0;
  double lp_test_acc = 0.0;
  std::string metrics_csv;  // full file content, header included
};

struct ProbePool {
  std::vector<std::size_t> rows;  // indices into the partitioned training set
  std::vector<int> labels;
};

// Rows the linear probe may train on. Under full_labels every training row
// is available; under labelled_subset only rows the owning client holds a
// label for. Clients are walked in ID order so the pool is deterministic.
inline ProbePool probe_pool(const Partition& part, const Dataset& train, LpMode mode) {
  ProbePool pool;
  for (const ClientDataset& client : part.clients) {
    for (std::size_t i = 0; i < client.indices.size(); ++i) {
      const bool use = mode == LpMode::full_labels ||
                       (!client.labelled_mask.empty() && client.labelled_mask[i]);
      if (use) {
        pool.rows.push_back(client.indices[i]);
        pool.labels.push_back(train.y[client.indices[i]]);
      }
    }
  }
  return pool;
}

// Runs one (grid point, seed) pipeline. `on_round_params` is optional
// instrumentation (checkpointing, ownership probes).
inline SeedOutcome run_single(const ExperimentConfig& cfg, const GridPoint& point,
                              std::uint64_t seed,
                              const std::function<void(int, const ModelParams&)>& on_round_params =
                                  nullptr) {
  Rng data_rng = Rng::derive(seed, "data");
  const Dataset full = generate_synthetic(cfg.num_classes, cfg.dim, cfg.n_per_class,
                                          cfg.class_separation, data_rng);
  const auto [train, test] = split_train_test(full, cfg.test_fraction, seed);

  PartitionSpec pspec;
  pspec.mode = point.mode;
  pspec.alpha = point.alpha;
  pspec.num_clients = cfg.num_clients;
  pspec.num_rotation_bins = cfg.num_rotation_bins;
  pspec.labelled_fraction = cfg.labelled_fraction;
  const Partition part = partition_dataset(train, pspec, seed);

  FederationConfig fed = cfg.fed;
  fed.method = point.method;
  fed.seed = seed;
  ModelDims dims = cfg.dims;
  dims.input_dim = train.dim();

  // The probe trains on the clients' stored (possibly rotated) features;
  // the test set keeps its clean features.
  const ProbePool pool = probe_pool(part, train, cfg.lp_mode);
  const std::vector<int>& probe_labels = pool.labels;
  const Matrix probe_x = part.data.x.gather_rows(pool.rows);

  LinearProbe probe(static_cast<std::size_t>(train.num_classes), dims.z_dim);
  EvalFn eval = [&](const ModelParams& params, int) {
    EvalResult r;
    const Matrix train_reps = extract_representations(params, probe_x);
    train_probe(probe, train_reps, probe_labels, cfg.lp_epochs, cfg.lp_lr);
    r.train_acc = probe_accuracy(probe, train_reps, probe_labels);
    const Matrix test_reps = extract_representations(params, test.x);
    r.test_acc = probe_accuracy(probe, test_reps, test.y);
    return r;
  };

  SeedOutcome out;
  out.seed = seed;
  out.metrics_csv = std::string(metrics_csv_header()) + "\n";
  MetricsSink sink = [&](const RoundMetrics& row) {
    out.metrics_csv += metrics_csv_row(row) + "\n";
    if (row.has_eval) {
      out.lp_train_acc = row.lp_train_acc;
      out.lp_test_acc = row.lp_test_acc;
    }
  };
  RoundHooks hooks;
  if (on_round_params) hooks.on_round_end = on_round_params;
  run_federation(fed, part, dims, cfg.aug, cfg.eval_cadence, eval, sink,
                 on_round_params ? &hooks : nullptr);
  return out;
}

struct GridSummary {
  GridPoint point;
  int num_seeds = 0;
  double test_mean = 0.0, test_stderr = 0.0;
  double train_mean = 0.0, train_stderr = 0.0;
};

inline GridSummary summarize(const GridPoint& point, const std::vector<SeedOutcome>& outcomes) {
  GridSummary s;
  s.point = point;
  s.num_seeds = static_cast<int>(outcomes.size());
  if (outcomes.empty()) return s;
  auto mean_stderr = [&](auto getter, double& mean, double& se) {
    double sum = 0.0;
    for (const auto& o : outcomes) sum += getter(o);
    mean = sum / outcomes.size();
    double ss = 0.0;
    for (const auto& o : outcomes) {
      const double d = getter(o) - mean;
      ss += d * d;
    }
    const double n = static_cast<double>(outcomes.size());
    se = n > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  };
  mean_stderr([](const SeedOutcome& o) { return o.lp_test_acc; }, s.test_mean, s.test_stderr);
  mean_stderr([](const SeedOutcome& o) { return o.lp_train_acc; }, s.train_mean, s.train_stderr);
  return s;
}

inline std::string format_alpha(double a) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", a);
  return buf;
}

inline const char* summary_csv_header() {
  return "method,mode,alpha,seeds,lp_test_acc_mean,lp_test_acc_stderr,"
         "lp_train_acc_mean,lp_train_acc_stderr";
}

inline std::string summary_csv_row(const GridSummary& s) {
  std::string row = method_name(s.point.method);
  row += ',';
  row += partition_mode_name(s.point.mode);
  row += ',' + format_alpha(s.point.alpha);
  row += ',' + std::to_string(s.num_seeds);
  for (double v : {s.test_mean, s.test_stderr, s.train_mean, s.train_stderr}) {
    row += ',' + format_metric(v);
  }
  return row;
}

// Pooled standard error of a difference in means: sqrt(se_a^2 + se_b^2).
inline double pooled_stderr(const GridSummary& a, const GridSummary& b) {
  return std::sqrt(a.test_stderr * a.test_stderr + b.test_stderr * b.test_stderr);
}

}  // namespace fcl
