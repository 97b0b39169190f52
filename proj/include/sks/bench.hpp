#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sks/metrics.hpp"
#include "sks/model.hpp"

namespace sks {

struct AlgoSpec {
  std::string id;  // rks, rks_ridge, l1, group_l1, rl2, sbl, msbl, vb, mvb,
                   // bp, group_bp, sbl_state
  std::map<std::string, double> params;
};

struct ExperimentConfig {
  int n = 10, m = 40, K = 10, s = 3;
  std::vector<int> p_values{12};
  double snr_db = 20.0;
  double sigma_u = 5.0;
  SupportMode support_mode = SupportMode::TimeVarying;
  int trials = 1;
  std::uint64_t seed = 1;
  std::vector<AlgoSpec> algorithms;

  // Phase sweep settings.
  std::vector<int> s_values;
  int p_start = 2;
  int p_stride = 1;
  int p_max = -1;  // default m
  double success_nmse = 0.05;
  double success_rate = 0.9;
};

// Flat key = value text with one [algorithm] section per solver; unknown
// keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

struct Instance {
  LdsModel model;
  SparseTrajectory traj;
};

// Deterministic per-(p, trial) instance, independent of the algorithm list.
Instance make_instance(const ExperimentConfig& cfg, int p, int trial,
                       bool noiseless = false);

// Runs one algorithm on one instance and fills every metric column.
MetricsRecord run_single(const AlgoSpec& algo, const ExperimentConfig& cfg,
                         int p, long long seed_tag, const Instance& inst);

// Full sweep over (algorithm, p, trial) with matched data per (p, trial);
// per-trial failures become rows with an error status. Appends one average
// row (seed = -1, status = "avg") per (algorithm, p) group.
std::vector<MetricsRecord> run_benchmark(const ExperimentConfig& cfg);

struct PhasePoint {
  std::string algo;
  int s = 0;
  int p_min = -1;  // -1 when unreachable
  double success_rate = 0.0;
  bool unreachable = false;
};

// Smallest p per (algorithm, s) reaching the success-rate target, where a
// trial succeeds when the input NMSE is below success_nmse.
std::vector<PhasePoint> phase_transition(const ExperimentConfig& cfg);

std::string phase_to_csv(const std::vector<PhasePoint>& points);

}  // namespace sks
