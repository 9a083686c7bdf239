#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudoct/model.hpp"

namespace pseudoct {

// (1/n) sum |ct - sct|. Throws DataError for empty or unequal inputs.
double mae(std::span<const double> ct, std::span<const double> sct);

struct ResidualWindow {
  double lo = 0.0;  // [lo, hi) in true CT units; the last window is closed
  double hi = 0.0;
  std::size_t count = 0;
  double sum = 0.0;       // sum of r = ct - sct
  double abs_sum = 0.0;
  double mean = 0.0;
  double mean_abs = 0.0;
  double sd = 0.0;        // sample standard deviation, 0 for count < 2
};

struct ResidualBins {
  double width = 20.0;
  std::vector<ResidualWindow> windows;
  std::size_t total() const;
};

// Residuals r = ct - sct binned by true CT into windows of `width` starting
// at min(ct). Window j covers [min + j w, min + (j+1) w); the windows run
// contiguously up to the one holding max(ct), empty ones included.
ResidualBins smoothed_residuals(std::span<const double> ct, std::span<const double> sct, double width = 20.0);

// Per-state mean target, ascending.
std::vector<double> group_mean_table(std::span<const GaussianComponent> components);
std::vector<double> group_mean_table(const Model& model);

struct LoocvOptions {
  FitConfig fit;
  double window_width = 20.0;
  // Receives (fold, head, voxels) whenever a head's data enters a fold's fit.
  std::function<void(std::size_t, std::size_t, std::size_t)> audit;
};

struct LoocvReport {
  Family family = Family::gmm;
  std::size_t k = 0;
  // mae[j][i]: head j predicted by the model fitted without head i. Empty
  // optionals mark folds whose fit failed.
  std::vector<std::vector<std::optional<double>>> mae;
  std::vector<std::optional<double>> column_mean;
  std::vector<std::optional<double>> held_out;  // diagonal
  std::optional<double> mean_held_out;
  std::vector<std::string> chosen_start;
  std::vector<std::string> fold_error;
  std::vector<std::vector<double>> group_means;  // per fold, ascending
  std::vector<double> baseline_mae;             // held-out MAE of the training median
  ResidualBins residuals;                       // held-out residuals pooled over heads
};

// Leave-one-out over heads. Fold i fits on every head except i, then scores
// every head. Folds run on config.workers threads with single-threaded fits.
LoocvReport run_loocv(std::span<const Volume> heads, const LoocvOptions& options);

// MAE of a fixed predictor on each head; used for the Bayes (true-parameter)
// reference.
std::vector<double> model_mae(const Model& model, std::span<const Volume> heads, const FitConfig& config);

std::string mae_matrix_csv(const LoocvReport& report);
std::string residual_bins_csv(const ResidualBins& bins);
std::string group_means_csv(const LoocvReport& report);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace pseudoct
