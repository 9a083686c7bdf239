#include "pseudoct/model_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "pseudoct/errors.hpp"

namespace pseudoct {

using nlohmann::json;

namespace {

json vec_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json mat_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Vector vec_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw DataError(std::string(what) + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Matrix mat_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw DataError(std::string(what) + " must be a nested array");
  const std::size_t cols = j[0].size();
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw DataError(std::string(what) + " rows differ in length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

json components_to_json(std::span<const GaussianComponent> comps) {
  json out = json::array();
  for (const auto& c : comps) out.push_back({{"mu", vec_to_json(c.mu())}, {"sigma", mat_to_json(c.sigma())}});
  return out;
}

std::vector<GaussianComponent> components_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw DataError("components must be a non-empty array");
  std::vector<GaussianComponent> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Vector mu = vec_from_json(j[i].at("mu"), "component mu");
    Matrix sigma = mat_from_json(j[i].at("sigma"), "component sigma");
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size())
      throw DataError("component " + std::to_string(i) + " sigma shape does not match mu");
    out.emplace_back(std::move(mu), std::move(sigma));
  }
  return out;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw DataError(what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw DataError(what + " has unknown field '" + key + "'");
  }
}

template <class Fn>
auto guarded(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& err) {
    throw DataError(what + ": " + err.what());
  }
}

}  // namespace

json fit_report_to_json(const FitReport& report) {
  return {{"objective", report.objective},
          {"param_change", report.param_change},
          {"iterations", report.iterations},
          {"converged", report.converged},
          {"final_rel_improvement", report.final_rel_improvement}};
}

json model_to_json(const Model& model) {
  json j;
  j["format_version"] = kModelFormatVersion;
  j["family"] = to_string(model.family);
  j["K"] = model.states();
  j["channels"] = {{"target", model.channels.target}, {"covariates", model.channels.covariates}};
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GmmParams>) {
          j["weights"] = vec_to_json(p.weights);
        } else if constexpr (std::is_same_v<T, HmmParams>) {
          j["pi"] = vec_to_json(p.pi);
          j["trans"] = mat_to_json(p.trans);
        } else {
          j["alpha"] = vec_to_json(p.alpha);
          j["beta"] = vec_to_json(p.beta);
        }
        j["components"] = components_to_json(p.components);
      },
      model.params);
  j["fit_report"] = fit_report_to_json(model.report);
  j["chosen_start"] = model.chosen_start;
  if (model.hilbert_order) j["hilbert_order"] = *model.hilbert_order;
  return j;
}

Model model_from_json(const json& j) {
  return guarded("model file", [&] {
    reject_unknown(j,
                   {"format_version", "family", "K", "channels", "weights", "pi", "trans", "alpha", "beta",
                    "components", "fit_report", "chosen_start", "hilbert_order"},
                   "model file");
    if (j.at("format_version").get<int>() != kModelFormatVersion)
      throw DataError("unsupported model format_version " + j.at("format_version").dump());
    Model m;
    m.family = parse_family(j.at("family").get<std::string>());
    m.channels.target = j.at("channels").at("target").get<std::string>();
    m.channels.covariates = j.at("channels").at("covariates").get<std::vector<std::string>>();
    auto comps = components_from_json(j.at("components"));
    if (j.at("K").get<std::size_t>() != comps.size()) throw DataError("model K does not match component count");
    if (comps.front().dim() != 1 + m.channels.covariates.size())
      throw DataError("model component dimension does not match its channel list");
    switch (m.family) {
      case Family::gmm: {
        GmmParams p{vec_from_json(j.at("weights"), "weights"), std::move(comps)};
        p.validate();
        m.params = std::move(p);
        break;
      }
      case Family::hmm: {
        HmmParams p{vec_from_json(j.at("pi"), "pi"), mat_from_json(j.at("trans"), "trans"), std::move(comps)};
        p.validate();
        m.params = std::move(p);
        break;
      }
      case Family::hmrf: {
        MrfParams p{vec_from_json(j.at("alpha"), "alpha"), vec_from_json(j.at("beta"), "beta"), std::move(comps)};
        p.validate();
        m.params = std::move(p);
        break;
      }
    }
    if (j.contains("fit_report")) {
      const auto& r = j.at("fit_report");
      m.report.objective = r.at("objective").get<std::vector<double>>();
      m.report.param_change = r.at("param_change").get<std::vector<double>>();
      m.report.iterations = r.at("iterations").get<int>();
      m.report.converged = r.at("converged").get<bool>();
      m.report.final_rel_improvement = r.at("final_rel_improvement").get<double>();
    }
    if (j.contains("chosen_start")) m.chosen_start = j.at("chosen_start").get<std::string>();
    if (j.contains("hilbert_order")) m.hilbert_order = j.at("hilbert_order").get<int>();
    return m;
  });
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_text(path, model_to_json(model).dump(2) + "\n");
}

Model load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

json phantom_spec_to_json(const PhantomSpec& spec) {
  json j;
  j["dims"] = spec.dims;
  j["voxel_size_mm"] = spec.voxel_size_mm;
  j["label_model"] = spec.label_model == LabelModel::potts ? "potts" : "hmm";
  j["components"] = components_to_json(spec.components);
  if (spec.label_model == LabelModel::potts) {
    j["alpha"] = vec_to_json(spec.alpha);
    j["beta"] = vec_to_json(spec.beta);
  } else {
    j["pi"] = vec_to_json(spec.pi);
    j["trans"] = mat_to_json(spec.trans);
  }
  json mask = {{"shape", spec.mask == MaskShape::full ? "full" : "ellipsoid"}};
  if (spec.semi_axes) mask["semi_axes"] = *spec.semi_axes;
  j["mask"] = mask;
  j["sweeps"] = spec.sweeps;
  j["seed"] = spec.seed;
  j["n_heads"] = spec.n_heads;
  return j;
}

PhantomSpec phantom_spec_from_json(const json& j) {
  return guarded("phantom spec", [&] {
    reject_unknown(j,
                   {"dims", "voxel_size_mm", "label_model", "components", "alpha", "beta", "pi", "trans", "mask",
                    "sweeps", "seed", "n_heads"},
                   "phantom spec");
    PhantomSpec s;
    s.dims = j.at("dims").get<std::array<std::int64_t, 3>>();
    if (j.contains("voxel_size_mm")) s.voxel_size_mm = j.at("voxel_size_mm").get<std::array<double, 3>>();
    const auto model = j.value("label_model", std::string("potts"));
    if (model == "potts") {
      s.label_model = LabelModel::potts;
    } else if (model == "hmm") {
      s.label_model = LabelModel::hmm;
    } else {
      throw DataError("phantom label_model must be 'potts' or 'hmm'");
    }
    s.components = components_from_json(j.at("components"));
    const auto k = static_cast<Eigen::Index>(s.components.size());
    if (s.label_model == LabelModel::potts) {
      s.alpha = j.contains("alpha") ? vec_from_json(j.at("alpha"), "alpha") : Vector(Vector::Zero(k));
      s.beta = j.contains("beta") ? vec_from_json(j.at("beta"), "beta") : Vector(Vector::Zero(k));
    } else {
      s.pi = vec_from_json(j.at("pi"), "pi");
      s.trans = mat_from_json(j.at("trans"), "trans");
    }
    if (j.contains("mask")) {
      const auto& m = j.at("mask");
      reject_unknown(m, {"shape", "semi_axes"}, "phantom mask");
      const auto shape = m.at("shape").get<std::string>();
      if (shape == "full") {
        s.mask = MaskShape::full;
      } else if (shape == "ellipsoid") {
        s.mask = MaskShape::ellipsoid;
      } else {
        throw DataError("phantom mask shape must be 'full' or 'ellipsoid'");
      }
      if (m.contains("semi_axes")) s.semi_axes = m.at("semi_axes").get<std::array<double, 3>>();
    }
    s.sweeps = j.value("sweeps", s.sweeps);
    s.seed = j.value("seed", s.seed);
    s.n_heads = j.value("n_heads", s.n_heads);
    s.validate();
    return s;
  });
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace pseudoct
