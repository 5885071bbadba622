// SPDX-License-Identifier: Apache-2.0
#include "beeplan/sd_model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "beeplan/errors.hpp"

namespace beeplan {

using nlohmann::json;

namespace {
constexpr double kBytesPerMb = 1e6;
}

void validate(const SdParams& p) {
  if (p.L_tokens < 1.0) throw ValidationError("L_tokens: must be >= 1");
  if (p.D < 0.0) throw ValidationError("D: must be >= 0");
  if (!(p.S > 0.0)) throw ValidationError("S: must be > 0");
  if (p.t_rtt_ms < 0.0) throw ValidationError("t_rtt_ms: must be >= 0");
  if (p.t_comp_ms < 0.0) throw ValidationError("t_comp_ms: must be >= 0");
  if (p.m < 1.0) throw ValidationError("m: must be >= 1");
  if (p.c_ms < 0.0) throw ValidationError("c_ms: must be >= 0");
  if (p.n < 1) throw ValidationError("n: must be >= 1");
  if (p.N_tree < 1.0) throw ValidationError("N_tree: must be >= 1");
  if (p.a < 1.0) throw ValidationError("a: must be >= 1");
  if (p.B < 1) throw ValidationError("B: must be >= 1");
}

double t_auto_at(const SdParams& p, double bandwidth) {
  double n = static_cast<double>(p.n);
  double transfer_ms = n * static_cast<double>(p.B) * p.D / bandwidth * 1000.0;
  return p.L_tokens * (n * p.t_comp_ms + transfer_ms + n * p.t_rtt_ms);
}

double t_auto(const SdParams& p) { return t_auto_at(p, p.S); }

double t_spec_at(const SdParams& p, double bandwidth) {
  double n = static_cast<double>(p.n);
  double transfer_ms = n * static_cast<double>(p.B) * p.N_tree * p.D / bandwidth * 1000.0;
  return p.L_tokens / p.a * (p.c_ms + n * p.m * p.t_comp_ms + transfer_ms + n * p.t_rtt_ms);
}

double t_spec(const SdParams& p) { return t_spec_at(p, p.S); }

BreakEven break_even_bandwidth(const SdParams& p) {
  double n = static_cast<double>(p.n);
  // Speculation wins iff B*(N-a)*D / S < (a-1)*t_rtt + (a-m)*t_comp - c/n,
  // both sides in ms once S is applied.
  double numerator_bytes = static_cast<double>(p.B) * (p.N_tree - p.a) * p.D;
  double denom_ms = (p.a - 1.0) * p.t_rtt_ms + (p.a - p.m) * p.t_comp_ms - p.c_ms / n;

  if (numerator_bytes > 0.0 && denom_ms <= 0.0) return {BreakEvenKind::NeverHelps, 0.0};
  if (numerator_bytes <= 0.0 && denom_ms > 0.0) return {BreakEvenKind::AlwaysHelps, 0.0};
  if (numerator_bytes == 0.0) return {BreakEvenKind::NeverHelps, 0.0};
  return {BreakEvenKind::Finite, numerator_bytes * 1000.0 / denom_ms};
}

SdDecision decide_sd(const SdParams& p, double measured_bandwidth,
                     const std::vector<PruneLevel>& levels) {
  if (levels.empty()) throw ValidationError("prune_levels: must be non-empty");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i].n_tree > levels[i - 1].n_tree)
      throw ValidationError("prune_levels: must be ordered by decreasing N_tree");
  }

  double autoregressive = t_auto_at(p, measured_bandwidth);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    SdParams level_params = p;
    level_params.N_tree = levels[i].n_tree;
    level_params.a = levels[i].a;
    if (t_spec_at(level_params, measured_bandwidth) < autoregressive) {
      return {true, static_cast<int>(i), levels[i]};
    }
  }
  return {false, -1, {}};
}

std::string sd_params_to_json(const SdParams& p) {
  json doc;
  doc["L_tokens"] = p.L_tokens;
  doc["D_mb"] = p.D / kBytesPerMb;
  doc["S_mb_per_s"] = p.S / kBytesPerMb;
  doc["t_rtt_ms"] = p.t_rtt_ms;
  doc["t_comp_ms"] = p.t_comp_ms;
  doc["m"] = p.m;
  doc["c_ms"] = p.c_ms;
  doc["n"] = p.n;
  doc["N_tree"] = p.N_tree;
  doc["a"] = p.a;
  doc["B"] = p.B;
  return doc.dump(2);
}

SdParams sd_params_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("sd params: ") + e.what());
  }
  SdParams p;
  try {
    p.L_tokens = doc.at("L_tokens").get<double>();
    p.D = doc.at("D_mb").get<double>() * kBytesPerMb;
    p.S = doc.at("S_mb_per_s").get<double>() * kBytesPerMb;
    p.t_rtt_ms = doc.at("t_rtt_ms").get<double>();
    p.t_comp_ms = doc.at("t_comp_ms").get<double>();
    p.m = doc.at("m").get<double>();
    p.c_ms = doc.at("c_ms").get<double>();
    p.n = doc.at("n").get<int>();
    p.N_tree = doc.at("N_tree").get<double>();
    p.a = doc.at("a").get<double>();
    p.B = doc.at("B").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sd params: ") + e.what());
  }
  validate(p);
  return p;
}

} // namespace beeplan
