#include "regtr/eval.hpp"

#include "regtr/error.hpp"
#include "regtr/grid_index.hpp"
#include "regtr/log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace regtr {
namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Nearest-rank percentile.
double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

double correspondence_rmse(const RigidTransform& est, std::span<const Correspondence> gt_pairs) {
  if (gt_pairs.empty()) throw InvalidArgument("correspondence_rmse: empty correspondence set");
  double s = 0;
  for (const auto& c : gt_pairs) s += (est(c.source_point) - c.target_point).squaredNorm();
  return std::sqrt(s / static_cast<double>(gt_pairs.size()));
}

std::vector<Correspondence> evaluation_pairs(const synth::PairSample& pair, double radius) {
  std::vector<Correspondence> exact = pair.gt_correspondences();
  if (!exact.empty()) return exact;
  std::vector<Correspondence> approx;
  const GridIndex index(pair.target);
  for (const Vec3& p : pair.source) {
    const NearestNeighbor nn = index.nearest(pair.gt_transform(p));
    if (nn.distance <= radius) approx.push_back({p, pair.target[nn.index], 1.0});
  }
  return approx;
}

RecallSummary registration_recall(std::span<const PairResult> results, double threshold) {
  if (results.empty()) throw InvalidArgument("registration_recall: no results");
  RecallSummary s;
  s.pairs = results.size();
  std::vector<double> rre_ok, rte_ok, rre_all, rte_all, cd, tp, tf, tq;
  for (const auto& r : results) {
    rre_all.push_back(r.rre_deg);
    rte_all.push_back(r.rte);
    cd.push_back(r.chamfer);
    tp.push_back(r.t_pre_ms);
    tf.push_back(r.t_feat_ms);
    tq.push_back(r.t_pose_ms);
    if (r.corr_rmse < threshold) {
      ++s.successes;
      rre_ok.push_back(r.rre_deg);
      rte_ok.push_back(r.rte);
    }
  }
  s.recall = static_cast<double>(s.successes) / static_cast<double>(s.pairs);
  s.rre_mean_success = mean_of(rre_ok);
  s.rre_median_success = median_of(rre_ok);
  s.rte_mean_success = mean_of(rte_ok);
  s.rte_median_success = median_of(rte_ok);
  s.rre_mean_all = mean_of(rre_all);
  s.rre_median_all = median_of(rre_all);
  s.rte_mean_all = mean_of(rte_all);
  s.rte_median_all = median_of(rte_all);
  s.chamfer_mean = mean_of(cd);
  s.t_pre_ms_mean = mean_of(tp);
  s.t_feat_ms_mean = mean_of(tf);
  s.t_pose_ms_mean = mean_of(tq);
  return s;
}

OracleReport oracle_match(const PointCloud& source_keypoints, const PointCloud& target_keypoints,
                          const RigidTransform& gt) {
  OracleReport r;
  if (source_keypoints.empty() || target_keypoints.empty()) return r;
  const GridIndex index(target_keypoints);
  for (const Vec3& p : source_keypoints) r.errors.push_back(index.nearest(gt(p)).distance);
  r.median = median_of(r.errors);
  r.p95 = percentile(r.errors, 0.95);
  return r;
}

PairResult score_pair(const synth::PairSample& pair, const RigidTransform& est, double success_threshold,
                      double radius) {
  PairResult r;
  r.rre_deg = rotation_error(est, pair.gt_transform);
  r.rte = translation_error(est, pair.gt_transform);
  const bool clean = pair.source_clean.size() == pair.source.size() && pair.target_clean.size() == pair.target.size() &&
                     !pair.source_clean.empty();
  r.chamfer = clean ? chamfer_distance(apply(est, pair.source_clean), pair.target_clean)
                    : chamfer_distance(apply(est, pair.source), pair.target);
  const std::vector<Correspondence> gtc = evaluation_pairs(pair, radius);
  if (gtc.empty()) throw InvalidArgument("score_pair: no ground-truth correspondences");
  r.corr_rmse = correspondence_rmse(est, gtc);
  r.success = r.corr_rmse < success_threshold;
  return r;
}

BenchmarkReport benchmark(std::span<const EvalPair> pairs, const ModelConfig& cfg, const ModelParams<float>& params,
                          const BenchmarkOptions& options) {
  if (pairs.empty()) throw InvalidArgument("benchmark: no pairs");
  BenchmarkReport report;
  report.solver = options.solver;
  report.success_threshold = options.success_threshold;
  const bool baseline = options.solver != SolverKind::kDirect;
  report.rows.resize(pairs.size());
  if (baseline) report.direct_rows.resize(pairs.size());
  const double radius = cfg.effective_overlap_radius();

  auto run = [&](std::size_t i, SolverKind solver) {
    RegisterOptions ro;
    ro.solver = solver;
    ro.ransac_iterations = options.ransac_iterations;
    ro.ransac_threshold = options.ransac_threshold;
    ro.seed = options.seed + i;
    const auto& pair = pairs[i].pair;
    PairResult r;
    try {
      const RegisterResult reg = register_pair(pair.source, pair.target, cfg, params, ro);
      r = score_pair(pair, reg.transform, options.success_threshold, radius);
      r.t_pre_ms = reg.t_pre_ms;
      r.t_feat_ms = reg.t_feat_ms;
      r.t_pose_ms = reg.t_pose_ms;
    } catch (const NumericalError& e) {
      log::warn("pair " + std::to_string(i) + ": " + e.what() + "; scored as identity");
      r = score_pair(pair, RigidTransform::identity(), options.success_threshold, radius);
      r.success = false;
      r.solver_failed = true;
    }
    r.pair_id = i;
    r.scene = pairs[i].scene;
    if (options.deterministic) r.t_pre_ms = r.t_feat_ms = r.t_pose_ms = 0;
    return r;
  };
  auto work = [&](std::size_t i) {
    report.rows[i] = run(i, options.solver);
    if (baseline) report.direct_rows[i] = run(i, SolverKind::kDirect);
  };

  const std::size_t threads = resolve_threads(options.threads, options.deterministic);
  if (threads == 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) work(i);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < pairs.size(); i += threads) work(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  report.summary = registration_recall(report.rows, options.success_threshold);
  if (baseline) report.direct_summary = registration_recall(report.direct_rows, options.success_threshold);
  return report;
}

void write_report_csv(const std::filesystem::path& path, std::span<const PairResult> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << "pair_id,rre_deg,rte,chamfer,corr_rmse,success,t_pre_ms,t_feat_ms,t_pose_ms\n" << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.pair_id << ',' << r.rre_deg << ',' << r.rte << ',' << r.chamfer << ',' << r.corr_rmse << ','
        << (r.success ? 1 : 0) << ',' << r.t_pre_ms << ',' << r.t_feat_ms << ',' << r.t_pose_ms << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

void write_block(std::ostream& out, const std::string& prefix, const RecallSummary& s) {
  out << prefix << "registration_recall = " << s.recall << '\n';
  out << prefix << "successes = " << s.successes << '\n';
  out << prefix << "rre_deg_mean_success = " << s.rre_mean_success << '\n';
  out << prefix << "rre_deg_median_success = " << s.rre_median_success << '\n';
  out << prefix << "rte_mean_success = " << s.rte_mean_success << '\n';
  out << prefix << "rte_median_success = " << s.rte_median_success << '\n';
  out << prefix << "rre_deg_mean_all = " << s.rre_mean_all << '\n';
  out << prefix << "rre_deg_median_all = " << s.rre_median_all << '\n';
  out << prefix << "rte_mean_all = " << s.rte_mean_all << '\n';
  out << prefix << "rte_median_all = " << s.rte_median_all << '\n';
  out << prefix << "chamfer_mean = " << s.chamfer_mean << '\n';
  out << prefix << "t_pre_ms_mean = " << s.t_pre_ms_mean << '\n';
  out << prefix << "t_feat_ms_mean = " << s.t_feat_ms_mean << '\n';
  out << prefix << "t_pose_ms_mean = " << s.t_pose_ms_mean << '\n';
}

}  // namespace

void write_summary(const std::filesystem::path& path, const BenchmarkReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write summary: " + path.string());
  out << std::setprecision(9);
  out << "pairs = " << report.summary.pairs << '\n';
  out << "solver = " << to_string(report.solver) << '\n';
  out << "success_threshold = " << report.success_threshold << '\n';
  write_block(out, "", report.summary);
  if (!report.direct_rows.empty()) write_block(out, "direct.", report.direct_summary);

  std::map<std::string, std::pair<std::size_t, std::size_t>> scenes;
  for (const auto& r : report.rows) {
    if (r.scene.empty()) continue;
    auto& [ok, n] = scenes[r.scene];
    ++n;
    if (r.success) ++ok;
  }
  for (const auto& [scene, c] : scenes) {
    out << "scene." << scene << ".registration_recall = " << static_cast<double>(c.first) / static_cast<double>(c.second)
        << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace regtr
