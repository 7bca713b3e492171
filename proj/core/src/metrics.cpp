#include "resmimic/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "resmimic/errors.hpp"

namespace resmimic {

void TrajectoryPair::validate() const {
  if (rollout.size() != reference.size())
    throw ContractViolation("trajectory lengths differ: " + std::to_string(rollout.size()) + " vs " +
                            std::to_string(reference.size()));
  if (rollout.empty()) throw ContractViolation("empty trajectory");
  if (!(fps > 0)) throw ContractViolation("fps must be > 0");
  const auto n = rollout[0].q.size();
  const auto bodies = rollout[0].links.size();
  for (std::size_t t = 0; t < rollout.size(); ++t)
    for (const auto* f : {&rollout[t], &reference[t]})
      if (f->q.size() != n || f->links.size() != bodies)
        throw ContractViolation("inconsistent trajectory dimensions at frame " + std::to_string(t));
}

TrackingMetrics compute_metrics(const TrajectoryPair& pair) {
  pair.validate();
  const auto& a = pair.rollout;
  const auto& b = pair.reference;
  const std::size_t T = a.size();
  const std::size_t bodies = a[0].links.size();
  const auto n = a[0].q.size();

  double g = 0.0, rel = 0.0, joint = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Vec2 offset = a[t].root_pos - b[t].root_pos;
    for (std::size_t i = 0; i < bodies; ++i) {
      const Vec2 d = a[t].links[i] - b[t].links[i];
      g += d.norm();
      rel += (d - offset).norm();
    }
    joint += (a[t].q - b[t].q).cwiseAbs().sum();
  }
  TrackingMetrics m;
  const double body_count = static_cast<double>(T * bodies);
  if (bodies > 0) {
    m.g_mpbpe = 1000.0 * g / body_count;
    m.mpbpe = 1000.0 * rel / body_count;
  }
  if (n > 0) m.mpjpe = 1000.0 * joint / static_cast<double>(T * n);

  if (T >= 2) {
    double jv = 0.0, bv = 0.0;
    for (std::size_t t = 1; t < T; ++t) {
      jv += ((a[t].q - a[t - 1].q) - (b[t].q - b[t - 1].q)).cwiseAbs().sum();
      for (std::size_t i = 0; i < bodies; ++i)
        bv += ((a[t].links[i] - a[t - 1].links[i]) - (b[t].links[i] - b[t - 1].links[i])).norm();
    }
    if (n > 0) m.mpjve = 1000.0 * jv / static_cast<double>((T - 1) * n);
    if (bodies > 0) m.mpbve = 1000.0 * bv / static_cast<double>((T - 1) * bodies);
  }
  return m;
}

MetricSummary summarize(const std::vector<TrackingMetrics>& episodes) {
  MetricSummary s;
  s.episodes = static_cast<int>(episodes.size());
  if (episodes.empty()) return s;
  auto field = [](TrackingMetrics& m, int k) -> double& {
    switch (k) {
      case 0: return m.g_mpbpe;
      case 1: return m.mpbpe;
      case 2: return m.mpjpe;
      case 3: return m.mpjve;
      default: return m.mpbve;
    }
  };
  const double count = static_cast<double>(episodes.size());
  for (int k = 0; k < 5; ++k) {
    double sum = 0.0;
    for (auto e : episodes) sum += field(e, k);
    const double mean = sum / count;
    double var = 0.0;
    for (auto e : episodes) var += (field(e, k) - mean) * (field(e, k) - mean);
    field(s.mean, k) = mean;
    field(s.std, k) = std::sqrt(var / count);
  }
  return s;
}

std::string metrics_table_header() {
  return "label,episodes,E_g_mpbpe,E_mpbpe,E_mpjpe,E_mpjve,E_mpbve";
}

std::string metrics_table_row(const std::string& label, const MetricSummary& s) {
  std::string row = label + "," + std::to_string(s.episodes);
  auto cell = [&](double mean, double sd) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), ",%.4f±%.4f", mean, sd);
    row += buf;
  };
  cell(s.mean.g_mpbpe, s.std.g_mpbpe);
  cell(s.mean.mpbpe, s.std.mpbpe);
  cell(s.mean.mpjpe, s.std.mpjpe);
  cell(s.mean.mpjve, s.std.mpjve);
  cell(s.mean.mpbve, s.std.mpbve);
  return row;
}

}  // namespace resmimic
