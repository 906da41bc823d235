// fcl: configuration-driven federated representation-learning experiments.
//
// Subcommands:
//   run              execute the experiment grid from a config file
//   validate         run the gradient and bound validation suites
//   partition-audit  dump partition manifests and per-client label histograms
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fcl/config.hpp"
#include "fcl/data.hpp"
#include "fcl/experiment.hpp"
#include "fcl/validation.hpp"

namespace {

namespace fs = std::filesystem;

std::string metrics_file_name(const fcl::ExperimentConfig& cfg, const fcl::GridPoint& point,
                              std::uint64_t seed) {
  const bool single = cfg.methods.size() == 1 && cfg.modes.size() == 1 && cfg.alphas.size() == 1;
  if (single) return "metrics_" + std::to_string(seed) + ".csv";
  std::string name = "metrics_";
  name += fcl::method_name(point.method);
  name += "_";
  name += fcl::partition_mode_name(point.mode);
  name += "_a" + fcl::format_alpha(point.alpha);
  name += "_" + std::to_string(seed) + ".csv";
  return name;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << content;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

void copy_config_verbatim(const std::string& config_path, const fs::path& out_dir) {
  std::ifstream is(config_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot reopen config " + config_path);
  std::stringstream ss;
  ss << is.rdbuf();
  write_text_file(out_dir / "config.txt", ss.str());
}

int cmd_run(const std::string& config_path, const std::string& out, int threads) {
  fcl::ExperimentConfig cfg = fcl::load_config(config_path);
  fcl::apply_seed_override(cfg);
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  copy_config_verbatim(config_path, out_dir);

  const std::vector<fcl::GridPoint> grid = fcl::experiment_grid(cfg);
  struct Job {
    std::size_t grid_idx;
    std::size_t seed_idx;
  };
  std::vector<Job> jobs;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) jobs.push_back({g, s});
  }
  std::vector<std::vector<fcl::SeedOutcome>> outcomes(grid.size());
  for (auto& v : outcomes) v.resize(cfg.seeds.size());

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size() || failed.load()) return;
      const fcl::GridPoint& point = grid[jobs[j].grid_idx];
      const std::uint64_t seed = cfg.seeds[jobs[j].seed_idx];
      try {
        std::function<void(int, const fcl::ModelParams&)> on_round;
        if (cfg.checkpoint_every > 0) {
          on_round = [&, point, seed](int round, const fcl::ModelParams& params) {
            if (round % cfg.checkpoint_every == 0) {
              std::string name = "checkpoint_";
              name += fcl::method_name(point.method);
              name += "_" + std::to_string(seed) + "_r" + std::to_string(round) + ".bin";
              fcl::save_checkpoint(params, (out_dir / name).string());
            }
          };
        }
        fcl::SeedOutcome o = fcl::run_single(cfg, point, seed, on_round);
        write_text_file(out_dir / metrics_file_name(cfg, point, seed), o.metrics_csv);
        {
          std::lock_guard<std::mutex> lock(log_mutex);
          std::cout << fcl::method_name(point.method) << " "
                    << fcl::partition_mode_name(point.mode) << " alpha="
                    << fcl::format_alpha(point.alpha) << " seed=" << seed
                    << " lp_test_acc=" << fcl::format_metric(o.lp_test_acc) << "\n";
        }
        outcomes[jobs[j].grid_idx][jobs[j].seed_idx] = std::move(o);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "error: seed " << seed << ": " << e.what() << "\n";
        failed.store(true);
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) return 1;

  std::string summary = std::string(fcl::summary_csv_header()) + "\n";
  std::string report = "experiment summary (mean +/- stderr over seeds)\n\n";
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const fcl::GridSummary s = fcl::summarize(grid[g], outcomes[g]);
    summary += fcl::summary_csv_row(s) + "\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %-16s alpha=%-8s lp_test_acc = %.4f +/- %.4f\n",
                  fcl::method_name(s.point.method), fcl::partition_mode_name(s.point.mode),
                  fcl::format_alpha(s.point.alpha).c_str(), s.test_mean, s.test_stderr);
    report += line;
  }
  write_text_file(out_dir / "summary.csv", summary);
  write_text_file(out_dir / "report.txt", report);
  std::cout << "wrote " << (out_dir / "summary.csv").string() << "\n";
  return 0;
}

int cmd_validate(const std::string& out) {
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::vector<fcl::CheckResult> results = fcl::run_gradient_suite(20240917);
  std::vector<fcl::CheckResult> bounds = fcl::run_bound_suite(20240917);
  results.insert(results.end(), bounds.begin(), bounds.end());
  const std::string report = fcl::format_report(results);
  std::cout << report;
  fcl::write_report((out_dir / "report.txt").string(), results);
  return fcl::all_pass(results) ? 0 : 1;
}

int cmd_partition_audit(const std::string& config_path, const std::string& out) {
  fcl::ExperimentConfig cfg = fcl::load_config(config_path);
  fcl::apply_seed_override(cfg);
  fs::path out_dir;
  if (!out.empty()) {
    out_dir = fs::path(out);
    fs::create_directories(out_dir);
  }
  for (fcl::PartitionMode mode : cfg.modes) {
    for (double alpha : cfg.alphas) {
      for (std::uint64_t seed : cfg.seeds) {
        fcl::Rng data_rng = fcl::Rng::derive(seed, "data");
        const fcl::Dataset full = fcl::generate_synthetic(cfg.num_classes, cfg.dim,
                                                          cfg.n_per_class,
                                                          cfg.class_separation, data_rng);
        const auto [train, test] = fcl::split_train_test(full, cfg.test_fraction, seed);
        fcl::PartitionSpec spec;
        spec.mode = mode;
        spec.alpha = alpha;
        spec.num_clients = cfg.num_clients;
        spec.num_rotation_bins = cfg.num_rotation_bins;
        spec.labelled_fraction = cfg.labelled_fraction;
        const fcl::Partition part = fcl::partition_dataset(train, spec, seed);

        std::cout << "mode=" << fcl::partition_mode_name(mode)
                  << " alpha=" << fcl::format_alpha(alpha) << " seed=" << seed << "\n";
        std::cout << "client  n      labelled  bins  label histogram\n";
        for (const auto& client : part.clients) {
          std::vector<int> hist(train.num_classes, 0);
          std::size_t labelled = 0;
          for (std::size_t i = 0; i < client.indices.size(); ++i) {
            ++hist[static_cast<std::size_t>(train.y[client.indices[i]])];
            if (!client.labelled_mask.empty() && client.labelled_mask[i]) ++labelled;
          }
          char head[64];
          std::snprintf(head, sizeof(head), "%-7d %-6zu %-9zu %-5zu ", client.client_id,
                        client.indices.size(), labelled, client.rotation_bins.size());
          std::cout << head;
          for (int h : hist) std::cout << h << " ";
          std::cout << "\n";
        }
        if (!out_dir.empty()) {
          std::string name = std::string("manifest_") + fcl::partition_mode_name(mode) + "_a" +
                             fcl::format_alpha(alpha) + "_" + std::to_string(seed) + ".csv";
          std::ofstream os(out_dir / name);
          if (!os) throw std::runtime_error("cannot open manifest file " + name);
          fcl::write_partition_manifest(os, part.clients);
        }
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated contrastive representation learning experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  int threads = 1;

  CLI::App* run = app.add_subcommand("run", "run the experiment grid from a config file");
  run->add_option("--config", config_path, "config file path")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--threads", threads, "worker threads over (grid, seed) jobs")
      ->check(CLI::PositiveNumber);

  CLI::App* validate = app.add_subcommand("validate", "run gradient and bound suites");
  validate->add_option("--out", out_dir, "output directory for report.txt");

  CLI::App* audit =
      app.add_subcommand("partition-audit", "dump partition manifests and label histograms");
  audit->add_option("--config", config_path, "config file path")->required();
  std::string audit_out;
  audit->add_option("--out", audit_out, "directory for manifest files (optional)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, threads);
    if (validate->parsed()) return cmd_validate(out_dir);
    if (audit->parsed()) return cmd_partition_audit(config_path, audit_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
