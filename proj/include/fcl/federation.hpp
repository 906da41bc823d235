// The federated training loop: seeded client sampling without replacement,
// local minibatch SGD on the composed client loss with the owner-only UV row
// update and unit-norm re-projection, delta aggregation into a pseudo-
// gradient, and a persistent server-side Adam step (or plain averaging in
// debug mode, which makes the centralized-equivalence test expressible).
//
// Every random decision comes from a substream derived from (seed, tag,
// indices), so a fixed (config, seed) pair reproduces the trajectory bit for
// bit regardless of scheduling; client updates only read the shared global
// parameters.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcl/data.hpp"
#include "fcl/losses.hpp"
#include "fcl/matrix.hpp"
#include "fcl/model.hpp"
#include "fcl/rng.hpp"

namespace fcl {

struct FederationConfig {
  int rounds = 100;
  int clients_per_round = 1;
  int local_epochs = 1;
  int batch_size = 128;
  double local_lr = 0.1;
  double server_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Method method = Method::federated_simclr;
  double uv_weight = 1.0;
  double temperature = 0.5;
  bool debug_average_server = false;  // plain averaging with unit step
  std::uint64_t seed = 1;

  void validate(int num_clients) const {
    if (rounds < 0) throw std::invalid_argument("federation: rounds must be >= 0");
    if (clients_per_round < 1 || clients_per_round > num_clients) {
      throw std::invalid_argument("federation: clients_per_round out of [1, num_clients]");
    }
    if (local_epochs < 1) throw std::invalid_argument("federation: local_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("federation: batch_size must be >= 1");
    if (local_lr < 0.0) throw std::invalid_argument("federation: local_lr must be >= 0");
    if (server_lr <= 0.0) throw std::invalid_argument("federation: server_lr must be > 0");
    if (uv_weight < 0.0) throw std::invalid_argument("federation: uv_weight must be >= 0");
    if (temperature <= 0.0) throw std::invalid_argument("federation: temperature must be > 0");
  }
};

struct ServerState {
  std::vector<double> m, v;
  long step_count = 0;
};

struct ClientLossStats {
  double total = 0.0, contrastive = 0.0, uv = 0.0, label = 0.0;
  int steps = 0;
};

// --- client update -----------------------------------------------------------

// Local epochs of seeded-shuffled minibatch SGD starting from the received
// global parameters. After every step the client's own UV row is re-projected
// to unit norm (UV methods only); no other UV row is ever written.
inline ModelParams client_update(const ModelParams& global, const Dataset& data,
                                 const ClientDataset& client, const FederationConfig& cfg,
                                 const AugmentSpec& aug, int round,
                                 ClientLossStats* stats = nullptr) {
  if (client.indices.empty()) {
    throw std::invalid_argument("client_update: empty client");
  }
  ModelParams local = global;
  Critic critic;
  critic.temperature = cfg.temperature;
  const bool has_uv = method_has_uv(cfg.method);

  std::vector<std::size_t> order(client.indices.size());
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = Rng::derive(cfg.seed, "client/shuffle",
                                  {static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(client.client_id),
                                   static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);
    const std::size_t n = order.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0, step = 0; start < n; start += bs, ++step) {
      const std::size_t end = std::min(start + bs, n);  // last partial batch kept
      std::vector<std::size_t> batch_rows;
      std::vector<int> labels;
      std::vector<std::uint8_t> mask;
      batch_rows.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t local_i = order[i];
        batch_rows.push_back(client.indices[local_i]);
        labels.push_back(data.y[client.indices[local_i]]);
        mask.push_back(client.labelled_mask.empty() ? 0 : client.labelled_mask[local_i]);
      }
      const Matrix batch_x = data.x.gather_rows(batch_rows);
      Rng aug_rng = Rng::derive(cfg.seed, "client/augment",
                                {static_cast<std::uint64_t>(round),
                                 static_cast<std::uint64_t>(client.client_id),
                                 static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(step)});
      auto [x1, x2] = make_views(batch_x, aug, aug_rng);
      StepResult r = loss_and_param_grads(local, x1, x2, labels, mask, client.client_id,
                                          cfg.method, cfg.uv_weight, critic);
      axpy(local, -cfg.local_lr, r.grads);
      if (has_uv) {
        normalize_row_in_place(local.uv_weights, static_cast<std::size_t>(client.client_id));
      }
      if (stats) {
        stats->total += r.total;
        stats->contrastive += r.contrastive;
        stats->uv += r.uv;
        stats->label += r.label;
        ++stats->steps;
      }
    }
  }
  return local;
}

// --- aggregation and server step -----------------------------------------------

// Mean over participants of (global - client), reduced in ascending client-ID
// order so the result is independent of completion order.
inline std::vector<double> aggregate_deltas(
    const ModelParams& global, const std::vector<std::pair<int, const ModelParams*>>& clients) {
  if (clients.empty()) throw std::invalid_argument("aggregate_deltas: no participants");
  std::vector<std::pair<int, const ModelParams*>> ordered = clients;
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::vector<double> g = flatten(global);
  std::vector<double> pseudo(g.size(), 0.0);
  for (const auto& [id, params] : ordered) {
    (void)id;
    const std::vector<double> c = flatten(*params);
    if (c.size() != g.size()) throw std::invalid_argument("aggregate_deltas: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) pseudo[i] += g[i] - c[i];
  }
  for (double& v : pseudo) v /= static_cast<double>(ordered.size());
  return pseudo;
}

// One server optimizer step on the pseudo-gradient. Adam with bias correction
// and persistent state; debug mode applies the raw mean delta (unit step).
inline void server_step(ModelParams& global, ServerState& state, const std::vector<double>& g,
                        const FederationConfig& cfg) {
  for (double v : g) {
    if (!std::isfinite(v)) throw std::runtime_error("server_step: non-finite pseudo-gradient");
  }
  std::vector<double> flat = flatten(global);
  if (state.m.empty()) {
    state.m.assign(flat.size(), 0.0);
    state.v.assign(flat.size(), 0.0);
  }
  if (g.size() != flat.size()) throw std::invalid_argument("server_step: size mismatch");
  if (cfg.debug_average_server) {
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= g[i];
  } else {
    ++state.step_count;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < flat.size(); ++i) {
      state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
      state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = state.m[i] / bc1;
      const double vhat = state.v[i] / bc2;
      flat[i] -= cfg.server_lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  global = unflatten(global, flat);
}

// --- training loop ----------------------------------------------------------------

struct RoundMetrics {
  int round = 0;
  Method method = Method::federated_simclr;
  double loss_total = 0.0, loss_contrastive = 0.0, loss_uv = 0.0, loss_label = 0.0;
  bool has_loss = false;
  double lp_train_acc = 0.0, lp_test_acc = 0.0;
  bool has_eval = false;
  int participating_clients = 0;
  double params_l2 = 0.0;
};

struct EvalResult {
  double train_acc = 0.0;
  double test_acc = 0.0;
};

// Test instrumentation: observe participants and the aggregated pseudo-
// gradient before the server step, each finished client update, and the
// global parameters after each round.
struct RoundHooks {
  std::function<void(int round, const std::vector<int>& participants,
                     const ModelParams& global, const std::vector<double>& pseudo_grad)>
      on_aggregate;
  std::function<void(int round, int client_id, const ModelParams& updated)> on_client_update;
  std::function<void(int round, const ModelParams& global)> on_round_end;
};

struct RunResult {
  std::vector<RoundMetrics> metrics;
  ModelParams params;
};

using EvalFn = std::function<EvalResult(const ModelParams&, int round)>;
using MetricsSink = std::function<void(const RoundMetrics&)>;

inline double params_l2(const ModelParams& p) {
  const std::vector<double> flat = flatten(p);
  double s = 0.0;
  for (double v : flat) s += v * v;
  return std::sqrt(s);
}

// Runs `cfg.rounds` federated rounds on the partitioned dataset. Evaluation
// runs before training (round 0), every `eval_every` rounds, and after the
// final round; rows stream through `sink` as they are produced so aborted
// runs leave partial metrics behind.
inline RunResult run_federation(const FederationConfig& cfg, const Partition& part,
                                const ModelDims& dims, const AugmentSpec& aug,
                                int eval_every, const EvalFn& eval,
                                const MetricsSink& sink = nullptr,
                                const RoundHooks* hooks = nullptr) {
  const int num_clients = static_cast<int>(part.clients.size());
  cfg.validate(num_clients);
  if (dims.input_dim != part.data.dim()) {
    throw std::invalid_argument("run_federation: model input dim != dataset dim");
  }

  Rng init_rng = Rng::derive(cfg.seed, "init");
  ModelParams global = init_model(dims, static_cast<std::size_t>(num_clients),
                                  static_cast<std::size_t>(part.data.num_classes),
                                  method_has_predictor(cfg.method), init_rng);
  ServerState state;
  RunResult out;

  auto emit = [&](const RoundMetrics& row) {
    out.metrics.push_back(row);
    if (sink) sink(row);
  };
  auto eval_row = [&](int round) {
    RoundMetrics row;
    row.round = round;
    row.method = cfg.method;
    row.params_l2 = params_l2(global);
    if (eval) {
      const EvalResult r = eval(global, round);
      row.lp_train_acc = r.train_acc;
      row.lp_test_acc = r.test_acc;
      row.has_eval = true;
    }
    return row;
  };

  emit(eval_row(0));

  for (int round = 1; round <= cfg.rounds; ++round) {
    Rng sample_rng = Rng::derive(cfg.seed, "sample", {static_cast<std::uint64_t>(round)});
    std::vector<int> picked =
        sample_rng.sample_without_replacement(num_clients, cfg.clients_per_round);
    std::sort(picked.begin(), picked.end());

    std::vector<ModelParams> updated;
    std::vector<int> participants;
    ClientLossStats stats;
    for (int id : picked) {
      const ClientDataset& client = part.clients[static_cast<std::size_t>(id)];
      if (client.indices.empty()) {
        std::cerr << "warning: client " << id << " has no data; skipped in round " << round
                  << "\n";
        continue;
      }
      updated.push_back(client_update(global, part.data, client, cfg, aug, round, &stats));
      participants.push_back(id);
      if (hooks && hooks->on_client_update) {
        hooks->on_client_update(round, id, updated.back());
      }
    }

    RoundMetrics row;
    row.round = round;
    row.method = cfg.method;
    row.participating_clients = static_cast<int>(participants.size());
    if (!participants.empty()) {
      std::vector<std::pair<int, const ModelParams*>> refs;
      refs.reserve(updated.size());
      for (std::size_t i = 0; i < updated.size(); ++i) {
        refs.emplace_back(participants[i], &updated[i]);
      }
      const std::vector<double> pseudo = aggregate_deltas(global, refs);
      if (hooks && hooks->on_aggregate) hooks->on_aggregate(round, participants, global, pseudo);
      server_step(global, state, pseudo, cfg);
      row.has_loss = stats.steps > 0;
      if (stats.steps > 0) {
        row.loss_total = stats.total / stats.steps;
        row.loss_contrastive = stats.contrastive / stats.steps;
        row.loss_uv = stats.uv / stats.steps;
        row.loss_label = stats.label / stats.steps;
      }
    }
    row.params_l2 = params_l2(global);
    const bool eval_now = (eval_every > 0 && round % eval_every == 0) || round == cfg.rounds;
    if (eval_now && eval) {
      const EvalResult r = eval(global, round);
      row.lp_train_acc = r.train_acc;
      row.lp_test_acc = r.test_acc;
      row.has_eval = true;
    }
    emit(row);
    if (hooks && hooks->on_round_end) hooks->on_round_end(round, global);
  }

  out.params = std::move(global);
  return out;
}

// --- metrics CSV ---------------------------------------------------------------------

inline const char* metrics_csv_header() {
  return "round,method,loss_total,loss_contrastive,loss_uv,loss_label,"
         "lp_train_acc,lp_test_acc,participating_clients,params_l2";
}

inline std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string metrics_csv_row(const RoundMetrics& m) {
  std::string row = std::to_string(m.round);
  row += ',';
  row += method_name(m.method);
  for (double v : {m.loss_total, m.loss_contrastive, m.loss_uv, m.loss_label}) {
    row += ',';
    if (m.has_loss) row += format_metric(v);
  }
  for (double v : {m.lp_train_acc, m.lp_test_acc}) {
    row += ',';
    if (m.has_eval) row += format_metric(v);
  }
  row += ',' + std::to_string(m.participating_clients);
  row += ',' + format_metric(m.params_l2);
  return row;
}

}  // namespace fcl
