#include "pseudoct/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <mutex>

#include "pseudoct/errors.hpp"
#include "pseudoct/parallel.hpp"

namespace pseudoct {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

std::vector<double> masked_target(const Volume& head, const std::string& target) {
  return truth_at(head, target, head.masked_voxels());
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double mae(std::span<const double> ct, std::span<const double> sct) {
  if (ct.size() != sct.size()) throw DataError("MAE inputs differ in length");
  if (ct.empty()) throw DataError("MAE of an empty mask");
  double sum = 0.0;
  for (std::size_t i = 0; i < ct.size(); ++i) sum += std::abs(ct[i] - sct[i]);
  return sum / static_cast<double>(ct.size());
}

std::size_t ResidualBins::total() const {
  std::size_t n = 0;
  for (const auto& w : windows) n += w.count;
  return n;
}

ResidualBins smoothed_residuals(std::span<const double> ct, std::span<const double> sct, double width) {
  if (!(width > 0.0)) throw DataError("residual window width must be positive");
  if (ct.size() != sct.size()) throw DataError("residual inputs differ in length");
  if (ct.empty()) throw DataError("residuals of an empty input");
  const auto [lo_it, hi_it] = std::minmax_element(ct.begin(), ct.end());
  const double lo = *lo_it;
  const auto windows = static_cast<std::size_t>(std::floor((*hi_it - lo) / width)) + 1;

  std::vector<std::vector<double>> bucket(windows);
  for (std::size_t i = 0; i < ct.size(); ++i) {
    const auto j = std::min(windows - 1, static_cast<std::size_t>(std::floor((ct[i] - lo) / width)));
    bucket[j].push_back(ct[i] - sct[i]);
  }

  ResidualBins out;
  out.width = width;
  out.windows.resize(windows);
  for (std::size_t j = 0; j < windows; ++j) {
    auto& w = out.windows[j];
    w.lo = lo + static_cast<double>(j) * width;
    w.hi = lo + static_cast<double>(j + 1) * width;
    w.count = bucket[j].size();
    for (double r : bucket[j]) {
      w.sum += r;
      w.abs_sum += std::abs(r);
    }
    if (w.count == 0) continue;
    const auto n = static_cast<double>(w.count);
    w.mean = w.sum / n;
    w.mean_abs = w.abs_sum / n;
    if (w.count > 1) {
      double ss = 0.0;
      for (double r : bucket[j]) ss += (r - w.mean) * (r - w.mean);
      w.sd = std::sqrt(ss / (n - 1.0));
    }
  }
  return out;
}

std::vector<double> group_mean_table(std::span<const GaussianComponent> components) {
  std::vector<double> out;
  out.reserve(components.size());
  for (const auto& c : components) out.push_back(c.mu_y());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> group_mean_table(const Model& model) { return group_mean_table(model.components()); }

std::vector<double> model_mae(const Model& model, std::span<const Volume> heads, const FitConfig& config) {
  std::vector<double> out;
  for (const auto& h : heads) {
    const Prediction p = predict_model(model, h, config);
    out.push_back(mae(truth_at(h, model.channels.target, p.voxels), p.values));
  }
  return out;
}

LoocvReport run_loocv(std::span<const Volume> heads, const LoocvOptions& options) {
  const std::size_t n = heads.size();
  if (n < 2) throw DataError("LOOCV needs at least 2 heads");

  LoocvReport report;
  report.family = options.fit.family;
  report.k = options.fit.k;
  report.mae.assign(n, std::vector<std::optional<double>>(n));
  report.chosen_start.assign(n, "");
  report.fold_error.assign(n, "");
  report.group_means.assign(n, {});
  report.baseline_mae.assign(n, 0.0);
  std::vector<std::vector<double>> held_ct(n), held_sct(n);

  FitConfig fold_config = options.fit;
  const unsigned fold_workers = std::min<std::size_t>(std::max(1u, options.fit.workers), n);
  if (fold_workers > 1) fold_config.workers = 1;
  std::mutex audit_mutex;

  parallel_for(n, fold_workers, [&](std::size_t i) {
    std::vector<const Volume*> train;
    std::vector<std::size_t> ids;
    for (std::size_t h = 0; h < n; ++h) {
      if (h == i) continue;
      train.push_back(&heads[h]);
      ids.push_back(h);
    }
    const std::string target = options.fit.channels.target;
    std::vector<double> pooled;
    for (const auto* h : train) {
      const auto t = masked_target(*h, target);
      pooled.insert(pooled.end(), t.begin(), t.end());
    }
    const double constant = median(std::move(pooled));
    const auto truth_i = masked_target(heads[i], target);
    report.baseline_mae[i] = mae(truth_i, std::vector<double>(truth_i.size(), constant));

    TrainingAudit audit;
    if (options.audit) {
      audit = [&](std::size_t pos, std::size_t voxels) {
        std::lock_guard lock(audit_mutex);
        options.audit(i, ids[pos], voxels);
      };
    }
    try {
      const Model model = fit_model(train, fold_config, audit);
      report.chosen_start[i] = model.chosen_start;
      report.group_means[i] = group_mean_table(model);
      for (std::size_t j = 0; j < n; ++j) {
        const Prediction p = predict_model(model, heads[j], fold_config);
        auto truth = truth_at(heads[j], model.channels.target, p.voxels);
        report.mae[j][i] = mae(truth, p.values);
        if (j == i) {
          held_ct[i] = std::move(truth);
          held_sct[i] = p.values;
        }
      }
    } catch (const std::runtime_error& err) {
      report.fold_error[i] = err.what();
      for (std::size_t j = 0; j < n; ++j) report.mae[j][i].reset();
    }
  });

  report.column_mean.resize(n);
  report.held_out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::optional<double>> col(n);
    for (std::size_t j = 0; j < n; ++j) col[j] = report.mae[j][i];
    report.column_mean[i] = mean_of(col);
    report.held_out[i] = report.mae[i][i];
  }
  report.mean_held_out = mean_of(report.held_out);

  std::vector<double> ct, sct;
  for (std::size_t i = 0; i < n; ++i) {
    ct.insert(ct.end(), held_ct[i].begin(), held_ct[i].end());
    sct.insert(sct.end(), held_sct[i].begin(), held_sct[i].end());
  }
  if (!ct.empty()) report.residuals = smoothed_residuals(ct, sct, options.window_width);
  return report;
}

std::string mae_matrix_csv(const LoocvReport& report) {
  const std::size_t n = report.mae.size();
  std::string out = "head";
  for (std::size_t i = 0; i < n; ++i) out += ",without_" + std::to_string(i);
  out += '\n';
  for (std::size_t j = 0; j < n; ++j) {
    out += std::to_string(j);
    for (std::size_t i = 0; i < n; ++i) out += "," + cell(report.mae[j][i]);
    out += '\n';
  }
  out += "mean";
  for (const auto& m : report.column_mean) out += "," + cell(m);
  out += '\n';
  return out;
}

std::string residual_bins_csv(const ResidualBins& bins) {
  std::string out = "ct_lo,ct_hi,count,mean_residual,mean_abs_residual,sd_residual\n";
  for (const auto& w : bins.windows) {
    out += format_double(w.lo) + "," + format_double(w.hi) + "," + std::to_string(w.count) + "," +
           format_double(w.mean) + "," + format_double(w.mean_abs) + "," + format_double(w.sd) + "\n";
  }
  return out;
}

std::string group_means_csv(const LoocvReport& report) {
  const std::size_t n = report.group_means.size();
  std::size_t k = 0;
  for (const auto& g : report.group_means) k = std::max(k, g.size());
  std::string out = "state";
  for (std::size_t i = 0; i < n; ++i) out += ",without_" + std::to_string(i);
  out += '\n';
  for (std::size_t s = 0; s < k; ++s) {
    out += std::to_string(s + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& g = report.group_means[i];
      out += "," + (s < g.size() ? format_double(g[s]) : std::string("NA"));
    }
    out += '\n';
  }
  return out;
}

}  // namespace pseudoct
