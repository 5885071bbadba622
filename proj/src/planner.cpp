// SPDX-License-Identifier: Apache-2.0
#include "beeplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "beeplan/errors.hpp"
#include "beeplan/log.hpp"

namespace beeplan {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct CommModel {
  double payload_bytes = 0.0; // per-hop activation payload after compression
  double extra_ms = 0.0;      // per-hop CPU charge (compression)
};

CommModel comm_model(const ClusterSpec& spec, int B, int M, bool compression,
                     const PlannerOptions& opts) {
  double requests = opts.payload_mode == CommPayloadMode::FullBatch
                        ? static_cast<double>(B)
                        : static_cast<double>(B / M);
  CommModel comm;
  comm.payload_bytes = requests * spec.model.activation_bytes();
  if (compression) {
    comm.payload_bytes *= opts.compression.ratio;
    comm.extra_ms = opts.compression.hop_cpu_ms;
  }
  return comm;
}

double hop_cost_ms(const ClusterSpec& spec, int from_idx, int to_idx, const CommModel& comm) {
  EffectiveHop hop = effective_hop(spec, from_idx, to_idx);
  return hop_comm_time(hop.latency_ms, hop.bandwidth_bps, comm.payload_bytes) + comm.extra_ms;
}

// Memory feasibility by direct substitution, with a small relative slack for
// the rounding in the derived alpha.
bool stage_fits(const NodeProfile& node, const ModelProfile& model, int layers, double alpha,
                int B, int b) {
  double gpu = static_cast<double>(node.gpu_mem);
  double host = static_cast<double>(node.host_mem);
  double weights = static_cast<double>(layers) * static_cast<double>(model.weight_bytes_per_block);
  double workspace = model.act_workspace_factor * static_cast<double>(b) * model.activation_bytes();
  double kv = static_cast<double>(layers) * static_cast<double>(model.kv_bytes_per_block_per_token) *
              static_cast<double>(B) * static_cast<double>(model.seq_len);
  double slack = 1.0 + 1e-9;
  return weights + workspace + (1.0 - alpha) * kv <= gpu * slack && alpha * kv <= host * slack;
}

struct ChainStage {
  int node_idx;
  int layers;
  double alpha;
};

// Shared evaluator: the DP, the brute-force oracle and pipeline_time must
// agree bitwise, so all three reduce to this exact accumulation order.
double chain_objective(const ClusterSpec& spec, const std::vector<ChainStage>& chain, int B, int M,
                       Objective objective, const CommModel& comm) {
  int b = B / M;
  double acc = 0.0;
  for (std::size_t k = 0; k < chain.size(); ++k) {
    const ChainStage& st = chain[k];
    double comp = stage_compute_time(spec.nodes[st.node_idx], st.layers, st.alpha, b);
    double hop = k + 1 < chain.size()
                     ? hop_cost_ms(spec, st.node_idx, chain[k + 1].node_idx, comm)
                     : 0.0;
    if (objective == Objective::SumOfStages) {
      acc = acc + comp;
      if (k + 1 < chain.size()) acc = acc + hop;
    } else {
      acc = std::max(acc, comp);
      if (k + 1 < chain.size()) acc = std::max(acc, hop);
    }
  }
  if (objective == Objective::SumOfStages) return acc * static_cast<double>(M);
  return (static_cast<double>(M) + static_cast<double>(chain.size()) - 1.0) * acc;
}

double throughput_from_step(const ClusterSpec& spec, int B, double step_ms) {
  // B*s tokens over the batch-step time.
  return static_cast<double>(B) * static_cast<double>(spec.model.seq_len) * 1000.0 / step_ms;
}

void check_preconditions(const ClusterSpec& spec, int B, int M) {
  if (B < 1) throw ValidationError("B: must be >= 1");
  if (M < 1 || B % M != 0) throw ValidationError("M: must divide B");
  (void)spec;
}

std::uint64_t composition_count(int n, int l) {
  // C(l + n - 1, n - 1), saturating.
  std::uint64_t result = 1;
  for (int i = 1; i <= n - 1; ++i) {
    result = result * static_cast<std::uint64_t>(l + i) / static_cast<std::uint64_t>(i);
    if (result > (1u << 30)) return result;
  }
  return result;
}

} // namespace

std::string objective_name(Objective obj) {
  return obj == Objective::SumOfStages ? "sum" : "cycle";
}

Objective objective_from_name(const std::string& name) {
  if (name == "sum") return Objective::SumOfStages;
  if (name == "cycle") return Objective::BottleneckCycle;
  throw ValidationError("objective: expected sum or cycle, got " + name);
}

EffectiveHop effective_hop(const ClusterSpec& spec, int from_idx, int to_idx) {
  const LinkProfile* direct =
      spec.find_link(spec.nodes[from_idx].node_id, spec.nodes[to_idx].node_id);
  if (direct != nullptr) return {direct->latency_ms, direct->bandwidth_bps};

  // No explicit bypass link: fold the skipped chain, latencies summed and
  // bandwidth min'ed over the adjacent links.
  EffectiveHop hop{0.0, kInf};
  for (int i = from_idx; i < to_idx; ++i) {
    const LinkProfile* step = spec.find_link(spec.nodes[i].node_id, spec.nodes[i + 1].node_id);
    if (step == nullptr)
      throw ValidationError("links: missing adjacent link after " + spec.nodes[i].node_id);
    hop.latency_ms += step->latency_ms;
    hop.bandwidth_bps = std::min(hop.bandwidth_bps, step->bandwidth_bps);
  }
  return hop;
}

double pipeline_time(const Plan& plan, const ClusterSpec& spec, const PlannerOptions& opts) {
  int n = spec.node_count();
  if (static_cast<int>(plan.layers.size()) != n)
    throw InfeasiblePlan("plan.layers: length must equal node count");
  check_preconditions(spec, plan.B, plan.M);
  int total = 0;
  for (int l : plan.layers) {
    if (l < 0) throw InfeasiblePlan("plan.layers: negative layer count");
    total += l;
  }
  if (total != spec.model.total_blocks)
    throw InfeasiblePlan("plan.layers: must sum to model.total_blocks");

  int b = plan.B / plan.M;
  std::vector<ChainStage> chain;
  for (int i = 0; i < n; ++i) {
    if (plan.layers[i] == 0) continue;
    double alpha;
    if (static_cast<int>(plan.alphas.size()) == n) {
      alpha = plan.alphas[i];
      if (alpha < 0.0 || alpha > 1.0)
        throw InfeasiblePlan("plan.alphas[" + std::to_string(i) + "]: outside [0,1]");
    } else {
      OffloadDecision offload =
          derive_offload_ratio(spec.nodes[i], spec.model, plan.layers[i], plan.B, b);
      if (!offload.feasible)
        throw InfeasiblePlan("node " + spec.nodes[i].node_id + ": no feasible offload ratio");
      alpha = offload.alpha;
    }
    if (!stage_fits(spec.nodes[i], spec.model, plan.layers[i], alpha, plan.B, b))
      throw InfeasiblePlan("node " + spec.nodes[i].node_id + ": memory constraints violated");
    chain.push_back({i, plan.layers[i], alpha});
  }
  if (chain.empty()) throw InfeasiblePlan("plan: no active nodes");

  CommModel comm = comm_model(spec, plan.B, plan.M, plan.compression, opts);
  return chain_objective(spec, chain, plan.B, plan.M, plan.objective, comm);
}

namespace {

// DP cell layout: slot (p, a) holds the best partial cost over assignments of
// j blocks to the first i nodes whose last active node is p-1 (p=0: none yet)
// with a active nodes. SumOfStages folds everything into a=0. Scalar cells
// are not enough here: bypass-link hops depend on the pair of active nodes,
// and the bottleneck objective's fill/drain factor depends on the active
// count, so both are carried in the slot index.
struct DpTables {
  int n = 0, l = 0, acount = 1;
  std::vector<double> value;       // [(n+1)][(l+1)][(n+1)][acount]
  std::vector<std::int16_t> from_l, from_p, from_a; // choice for slots with p == i

  std::size_t vidx(int i, int j, int p, int a) const {
    return ((static_cast<std::size_t>(i) * (l + 1) + j) * (n + 1) + p) * acount + a;
  }
  std::size_t cidx(int i, int j, int a) const {
    return (static_cast<std::size_t>(i - 1) * (l + 1) + j) * acount + a;
  }
};

} // namespace

Plan solve_layer_assignment(const ClusterSpec& spec, int B, int M, Objective objective,
                            bool compression, const PlannerOptions& opts, SolveStats* stats) {
  check_preconditions(spec, B, M);
  const int n = spec.node_count();
  const int l = spec.model.total_blocks;
  const int b = B / M;
  const bool bottleneck = objective == Objective::BottleneckCycle;
  CommModel comm = comm_model(spec, B, M, compression, opts);

  // Per-node stage compute cost and derived alpha for every layer count.
  std::vector<std::vector<double>> comp(n, std::vector<double>(l + 1, kInf));
  std::vector<std::vector<double>> alpha(n, std::vector<double>(l + 1, 0.0));
  for (int i = 0; i < n; ++i) {
    comp[i][0] = 0.0;
    for (int layers = 1; layers <= l; ++layers) {
      OffloadDecision offload = derive_offload_ratio(spec.nodes[i], spec.model, layers, B, b);
      if (!offload.feasible) continue;
      alpha[i][layers] = offload.alpha;
      comp[i][layers] = stage_compute_time(spec.nodes[i], layers, offload.alpha, b);
    }
  }

  // Pairwise hop costs between potential consecutive active nodes.
  std::vector<std::vector<double>> hop(n, std::vector<double>(n, 0.0));
  for (int p = 0; p < n; ++p)
    for (int q = p + 1; q < n; ++q) hop[p][q] = hop_cost_ms(spec, p, q, comm);

  DpTables dp;
  dp.n = n;
  dp.l = l;
  dp.acount = bottleneck ? n + 1 : 1;
  dp.value.assign(static_cast<std::size_t>(n + 1) * (l + 1) * (n + 1) * dp.acount, kInf);
  dp.from_l.assign(static_cast<std::size_t>(n) * (l + 1) * dp.acount, -1);
  dp.from_p.assign(dp.from_l.size(), -1);
  dp.from_a.assign(dp.from_l.size(), -1);
  dp.value[dp.vidx(0, 0, 0, 0)] = 0.0;

  std::uint64_t combine_steps = 0;
  for (int i = 1; i <= n; ++i) {
    for (int j = 0; j <= l; ++j) {
      for (int ell = 0; ell <= j; ++ell) {
        ++combine_steps; // one combine per (i, j, ell), N*(L+1)*(L+2)/2 total
        if (ell == 0) {
          // Node i-1 stays inactive; slots carry over unchanged.
          for (int p = 0; p < i; ++p) {
            for (int a = 0; a < dp.acount; ++a) {
              double v = dp.value[dp.vidx(i - 1, j, p, a)];
              if (v < dp.value[dp.vidx(i, j, p, a)]) dp.value[dp.vidx(i, j, p, a)] = v;
            }
          }
          continue;
        }
        double c = comp[i - 1][ell];
        if (!std::isfinite(c)) continue;
        for (int p = 0; p < i; ++p) {
          for (int a = 0; a < dp.acount; ++a) {
            double base = dp.value[dp.vidx(i - 1, j - ell, p, a)];
            if (!std::isfinite(base)) continue;
            double v;
            if (bottleneck) {
              v = p == 0 ? std::max(base, c) : std::max(std::max(base, hop[p - 1][i - 1]), c);
            } else {
              v = p == 0 ? base + c : (base + hop[p - 1][i - 1]) + c;
            }
            int na = bottleneck ? std::min(a + 1, n) : 0;
            std::size_t dst = dp.vidx(i, j, i, na);
            if (v < dp.value[dst]) {
              dp.value[dst] = v;
              std::size_t ci = dp.cidx(i, j, na);
              dp.from_l[ci] = static_cast<std::int16_t>(ell);
              dp.from_p[ci] = static_cast<std::int16_t>(p);
              dp.from_a[ci] = static_cast<std::int16_t>(a);
            }
          }
        }
      }
    }
  }
  if (stats != nullptr) stats->combine_steps = combine_steps;

  // Pick the best final slot; the last active node carries no outgoing hop.
  double best = kInf;
  int best_p = -1, best_a = -1;
  for (int p = 1; p <= n; ++p) {
    for (int a = 0; a < dp.acount; ++a) {
      double v = dp.value[dp.vidx(n, l, p, a)];
      if (!std::isfinite(v)) continue;
      double objective_value =
          bottleneck ? (static_cast<double>(M) + static_cast<double>(a) - 1.0) * v
                     : v * static_cast<double>(M);
      if (objective_value < best) {
        best = objective_value;
        best_p = p;
        best_a = a;
      }
    }
  }
  if (best_p < 0) throw NoFeasiblePlan("no layer assignment satisfies the memory constraints");

  // Backtrack. Slots with p == i record their (ell, src) choice; slots with
  // p < i can only have arrived through the ell = 0 carry-over.
  Plan plan;
  plan.layers.assign(n, 0);
  plan.alphas.assign(n, 0.0);
  plan.B = B;
  plan.M = M;
  plan.compression = compression;
  plan.objective = objective;
  int i = n, j = l, p = best_p, a = best_a;
  while (i > 0) {
    if (p < i) {
      --i;
      continue;
    }
    std::size_t ci = dp.cidx(i, j, a);
    int ell = dp.from_l[ci];
    int sp = dp.from_p[ci];
    int sa = dp.from_a[ci];
    plan.layers[i - 1] = ell;
    plan.alphas[i - 1] = alpha[i - 1][ell];
    j -= ell;
    p = sp;
    a = sa;
    --i;
  }

  plan.predicted_step_time = best;
  plan.predicted_throughput = throughput_from_step(spec, B, best);
  return plan;
}

Plan brute_force_assignment(const ClusterSpec& spec, int B, int M, Objective objective,
                            bool compression, const PlannerOptions& opts) {
  check_preconditions(spec, B, M);
  const int n = spec.node_count();
  const int l = spec.model.total_blocks;
  const int b = B / M;
  if (composition_count(n, l) > 1000000ull)
    throw TooLarge("brute_force_assignment: more than 1e6 compositions");

  CommModel comm = comm_model(spec, B, M, compression, opts);

  std::vector<std::vector<double>> alpha(n, std::vector<double>(l + 1, -1.0));
  auto alpha_for = [&](int node, int layers) {
    if (alpha[node][layers] < 0.0) {
      OffloadDecision offload = derive_offload_ratio(spec.nodes[node], spec.model, layers, B, b);
      alpha[node][layers] = offload.feasible ? offload.alpha : 2.0; // 2.0 marks infeasible
    }
    return alpha[node][layers];
  };

  std::vector<int> layers(n, 0);
  std::vector<int> best_layers;
  double best = kInf;

  // Lexicographic enumeration of all compositions of l into n parts.
  std::vector<ChainStage> chain;
  auto evaluate = [&]() {
    chain.clear();
    for (int i = 0; i < n; ++i) {
      if (layers[i] == 0) continue;
      double a = alpha_for(i, layers[i]);
      if (a > 1.0) return; // infeasible stage
      chain.push_back({i, layers[i], a});
    }
    double value = chain_objective(spec, chain, B, M, objective, comm);
    if (value < best) {
      best = value;
      best_layers = layers;
    }
  };

  // Lexicographic walk over all compositions of l into n parts; the last
  // node absorbs whatever remains.
  auto walk = [&](auto&& self, int node, int remaining) -> void {
    if (node == n - 1) {
      layers[node] = remaining;
      evaluate();
      return;
    }
    for (int take = 0; take <= remaining; ++take) {
      layers[node] = take;
      self(self, node + 1, remaining - take);
    }
  };
  walk(walk, 0, l);

  if (best_layers.empty())
    throw NoFeasiblePlan("no layer assignment satisfies the memory constraints");

  Plan plan;
  plan.layers = best_layers;
  plan.alphas.assign(n, 0.0);
  for (int i = 0; i < n; ++i)
    if (best_layers[i] > 0) plan.alphas[i] = alpha_for(i, best_layers[i]);
  plan.B = B;
  plan.M = M;
  plan.compression = compression;
  plan.objective = objective;
  plan.predicted_step_time = best;
  plan.predicted_throughput = throughput_from_step(spec, B, best);
  return plan;
}

Plan enumerate_plans(const ClusterSpec& spec, const PlannerOptions& opts) {
  if (opts.batch_candidates.empty()) throw ValidationError("batch_candidates: must be non-empty");

  bool have_best = false;
  Plan best;
  auto better = [&](const Plan& candidate) {
    if (!have_best) return true;
    if (candidate.predicted_throughput != best.predicted_throughput)
      return candidate.predicted_throughput > best.predicted_throughput;
    if (candidate.M != best.M) return candidate.M < best.M;
    if (candidate.B != best.B) return candidate.B < best.B;
    return !candidate.compression && best.compression;
  };

  for (int B : opts.batch_candidates) {
    if (B < 1) throw ValidationError("batch_candidates: must be >= 1");
    for (int M = 1; M <= std::min(B, opts.max_micro_batches); ++M) {
      if (B % M != 0) continue;
      Objective objective = M == 1 ? Objective::SumOfStages : Objective::BottleneckCycle;
      if (opts.forced_objective) {
        objective = *opts.forced_objective;
        if (objective == Objective::SumOfStages && M > 1) continue;
      }
      for (bool compression : {false, true}) {
        try {
          Plan plan = opts.use_oracle
                          ? brute_force_assignment(spec, B, M, objective, compression, opts)
                          : solve_layer_assignment(spec, B, M, objective, compression, opts);
          if (better(plan)) {
            best = plan;
            have_best = true;
          }
        } catch (const NoFeasiblePlan&) {
          // candidate ruled out by memory; keep scanning
        }
      }
    }
  }
  if (!have_best) throw NoFeasiblePlan("no candidate (B, M) admits a feasible assignment");
  log::debug("enumerate_plans: B=" + std::to_string(best.B) + " M=" + std::to_string(best.M) +
             " compression=" + (best.compression ? std::string("on") : std::string("off")));
  return best;
}

std::string plan_to_json(const Plan& plan) {
  json doc;
  doc["layers"] = plan.layers;
  doc["alphas"] = plan.alphas;
  doc["B"] = plan.B;
  doc["M"] = plan.M;
  doc["compression"] = plan.compression;
  doc["sd"] = plan.sd;
  doc["objective"] = objective_name(plan.objective);
  doc["predicted_throughput"] = plan.predicted_throughput;
  doc["predicted_step_time"] = plan.predicted_step_time;
  return doc.dump(2);
}

Plan plan_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("plan: ") + e.what());
  }
  Plan plan;
  try {
    plan.layers = doc.at("layers").get<std::vector<int>>();
    plan.alphas = doc.at("alphas").get<std::vector<double>>();
    plan.B = doc.at("B").get<int>();
    plan.M = doc.at("M").get<int>();
    plan.compression = doc.at("compression").get<bool>();
    plan.sd = doc.at("sd").get<bool>();
    plan.objective = objective_from_name(doc.at("objective").get<std::string>());
    plan.predicted_throughput = doc.at("predicted_throughput").get<double>();
    plan.predicted_step_time = doc.at("predicted_step_time").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("plan: ") + e.what());
  }
  return plan;
}

} // namespace beeplan
