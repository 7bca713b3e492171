#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "resmimic/sim_core.hpp"

namespace resmimic {

struct TrajectoryFrame {
  Vec q;
  std::vector<Vec2> links;  // world-frame link endpoints
  Vec2 root_pos = Vec2::Zero();
  double root_pitch = 0.0;
};

struct TrajectoryPair {
  std::vector<TrajectoryFrame> rollout;
  std::vector<TrajectoryFrame> reference;
  double fps = 50.0;

  /// Throws ContractViolation on length or layout mismatch.
  void validate() const;
};

/// Position metrics in mm, joint metrics in 1e-3 rad; velocity variants are
/// per frame (first differences of raw quantities).
struct TrackingMetrics {
  double g_mpbpe = 0.0;
  double mpbpe = 0.0;
  double mpjpe = 0.0;
  double mpjve = 0.0;
  double mpbve = 0.0;
};

TrackingMetrics compute_metrics(const TrajectoryPair& pair);

struct MetricSummary {
  TrackingMetrics mean;
  TrackingMetrics std;  // population std over episodes
  int episodes = 0;
};

MetricSummary summarize(const std::vector<TrackingMetrics>& episodes);

/// Header: label,episodes,E_g_mpbpe,E_mpbpe,E_mpjpe,E_mpjve,E_mpbve
/// with each metric cell formatted "mean±std".
std::string metrics_table_header();
std::string metrics_table_row(const std::string& label, const MetricSummary& summary);

}  // namespace resmimic
