#pragma once

#include <filesystem>

#include <json.hpp>

#include "pseudoct/model.hpp"
#include "pseudoct/phantom.hpp"

namespace pseudoct {

inline constexpr int kModelFormatVersion = 1;

// Model file layout:
//   { "format_version": 1, "family": "gmm" | "hmm" | "hmrf", "K": k,
//     "channels": {"target": "CT", "covariates": [...]},
//     "weights": [...]                      (gmm)
//     "pi": [...], "trans": [[...], ...]    (hmm)
//     "alpha": [...], "beta": [...]         (hmrf)
//     "components": [{"mu": [...], "sigma": [[...], ...]}, ...],
//     "fit_report": {...}, "chosen_start": "...", "hilbert_order": p }
// Doubles are written in shortest round-trip form, so save/load is exact.
nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

nlohmann::json fit_report_to_json(const FitReport& report);

// Phantom spec layout (see README for an example):
//   dims, voxel_size_mm, label_model ("potts" | "hmm"), components,
//   alpha + beta (potts) or pi + trans (hmm), mask {"shape": "full" |
//   "ellipsoid", "semi_axes": [...]}, sweeps, seed, n_heads.
nlohmann::json phantom_spec_to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

// Parses a JSON file, reporting syntax errors as DataError.
nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pseudoct
