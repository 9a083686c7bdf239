#include "pseudoct/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "pseudoct/errors.hpp"
#include "pseudoct/eval.hpp"
#include "pseudoct/model_io.hpp"
#include "pseudoct/random.hpp"

#ifndef PSEUDOCT_VERSION
#define PSEUDOCT_VERSION "0.0.0"
#endif

namespace pseudoct::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kPathOptions{"--volume", "--model", "--spec", "--ensemble", "--prediction"};

struct FitFlags {
  std::string family = "hmm";
  std::size_t k = 5;
  double tol = 0.0;
  int max_iter = 0;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  int burn_in = 100;
  int samples = 200;
  int predict_burn_in = 500;
  int predict_samples = 1000;
  int hilbert_order = 0;
  std::vector<std::int64_t> offset;
  double beta_init = 0.0;
  bool freeze_beta = false;
  int kmeans_starts = 3;
  bool no_hierarchical = false;
  std::size_t hierarchical_cap = 2000;
  std::string target = "CT";
  std::vector<std::string> covariates;

  const CLI::App* active = nullptr;  // subcommand that was parsed

  bool given(const std::string& name) const {
    const auto* opt = active ? active->get_option_no_throw(name) : nullptr;
    return opt && opt->count() > 0;
  }
};

struct Flags {
  std::string out;
  std::vector<std::string> volumes;
  std::string model;
  std::string spec;
  std::string ensemble;
  std::string prediction;
  std::string manifest;
  std::string prediction_channel = "sCT";
  double window = 20.0;
  int n_heads = 0;
  FitFlags fit;
};

// Everything a runner reports back for the manifest.
struct RunRecord {
  json config = json::object();
  std::vector<fs::path> inputs;
  std::vector<std::string> outputs;
};

void add_sequence_flags(CLI::App* sub, FitFlags& f) {
  sub->add_option("--hilbert-order", f.hilbert_order, "Hilbert curve order (default: covering)")
                    ->check(CLI::Range(1, HilbertOrder::kMax));
  sub->add_option("--offset", f.offset, "placement of the volume inside the curve cube (x y z)")->expected(3);
}

void add_fit_flags(CLI::App* sub, FitFlags& f, bool with_family) {
  if (with_family)
    sub->add_option("--family", f.family, "model family")->check(CLI::IsMember({"gmm", "hmm", "hmrf"}))->required();
  sub->add_option("--k", f.k, "number of latent classes")->check(CLI::PositiveNumber);
  sub->add_option("--tol", f.tol, "convergence tolerance (default 1e-6; hmrf 1e-3)")
                  ->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", f.max_iter, "iteration cap (default 500; hmrf 50)")
                       ->check(CLI::PositiveNumber);
  sub->add_option("--burn-in", f.burn_in, "Gibbs burn-in sweeps while fitting")->check(CLI::NonNegativeNumber);
  sub->add_option("--samples", f.samples, "Gibbs sample sweeps while fitting")->check(CLI::PositiveNumber);
  sub->add_option("--predict-burn-in", f.predict_burn_in, "Gibbs burn-in sweeps for prediction")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--predict-samples", f.predict_samples, "Gibbs sample sweeps for prediction")
      ->check(CLI::PositiveNumber);
  sub->add_option("--beta-init", f.beta_init, "initial pair potential for hmrf fits");
  sub->add_flag("--freeze-beta", f.freeze_beta, "keep beta at --beta-init");
  sub->add_option("--kmeans-starts", f.kmeans_starts, "number of k-means starts")->check(CLI::NonNegativeNumber);
  sub->add_flag("--no-hierarchical", f.no_hierarchical, "skip the Ward clustering start");
  sub->add_option("--hierarchical-cap", f.hierarchical_cap, "subsample size for Ward clustering")
      ->check(CLI::PositiveNumber);
  sub->add_option("--target", f.target, "target channel");
  sub->add_option("--covariates", f.covariates, "covariate channels (default: all but mask and target)");
  add_sequence_flags(sub, f);
}

SequenceOptions sequence_options(const FitFlags& f) {
  SequenceOptions s;
  if (f.given("--hilbert-order")) s.order = f.hilbert_order;
  if (!f.offset.empty()) s.offset = std::array<std::int64_t, 3>{f.offset[0], f.offset[1], f.offset[2]};
  return s;
}

FitConfig fit_config(const FitFlags& f, Family family) {
  FitConfig c;
  c.family = family;
  c.k = f.k;
  if (f.given("--tol")) c.tol = f.tol;
  if (f.given("--max-iter")) c.max_iter = f.max_iter;
  c.seed = f.seed;
  c.workers = f.workers;
  c.kmeans_starts = f.kmeans_starts;
  c.hierarchical_start = !f.no_hierarchical;
  c.hierarchical_cap = f.hierarchical_cap;
  c.fit_gibbs.burn_in = f.burn_in;
  c.fit_gibbs.samples = f.samples;
  c.predict_gibbs.burn_in = f.predict_burn_in;
  c.predict_gibbs.samples = f.predict_samples;
  c.beta_init = f.beta_init;
  c.freeze_beta = f.freeze_beta;
  c.sequence = sequence_options(f);
  c.channels.target = f.target;
  c.channels.covariates = f.covariates;
  return c;
}

json config_json(const FitConfig& c) {
  json j;
  j["family"] = to_string(c.family);
  j["k"] = c.k;
  j["tol"] = c.resolved_tol();
  j["max_iter"] = c.resolved_max_iter();
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["kmeans_starts"] = c.kmeans_starts;
  j["hierarchical_start"] = c.hierarchical_start;
  j["hierarchical_cap"] = c.hierarchical_cap;
  j["fit_gibbs"] = {{"burn_in", c.fit_gibbs.burn_in}, {"samples", c.fit_gibbs.samples}};
  j["predict_gibbs"] = {{"burn_in", c.predict_gibbs.burn_in}, {"samples", c.predict_gibbs.samples}};
  j["beta_init"] = c.beta_init;
  j["freeze_beta"] = c.freeze_beta;
  j["hilbert_order"] = c.sequence.order ? json(*c.sequence.order) : json("covering");
  j["offset"] = c.sequence.offset ? json(*c.sequence.offset) : json("centred");
  j["target"] = c.channels.target;
  j["covariates"] = c.channels.covariates;
  return j;
}

void record_volume(RunRecord& rec, const fs::path& path) {
  const auto p = volume_paths(path);
  rec.inputs.push_back(p.header);
  rec.inputs.push_back(p.payload);
}

void write_output(RunRecord& rec, const fs::path& dir, const std::string& name, const std::string& text) {
  write_text(dir / name, text);
  rec.outputs.push_back(name);
}

void save_output_volume(RunRecord& rec, const fs::path& dir, const std::string& stem, const Volume& v) {
  save_volume(v, dir / stem);
  rec.outputs.push_back(stem + ".json");
  rec.outputs.push_back(stem + ".raw");
}

std::vector<fs::path> ensemble_members(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("ensemble directory " + dir.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto& p = e.path();
    if (p.extension() == ".json" && fs::exists(fs::path(p).replace_extension(".raw"))) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("ensemble directory " + dir.string() + " holds no volumes");
  return out;
}

Volume label_volume(const Phantom& ph) {
  VolumeHeader h = ph.volume.header();
  h.channels = {kMaskChannel, "label"};
  const auto n = static_cast<std::size_t>(h.voxel_count());
  const auto mask = ph.volume.channel(kMaskChannel);
  std::vector<float> data(2 * n, 0.0f);
  for (std::size_t v = 0; v < n; ++v) {
    data[v] = mask[v];
    if (ph.labels[v] != kNoLabel) data[n + v] = static_cast<float>(ph.labels[v]);
  }
  return Volume(std::move(h), std::move(data));
}

std::string fit_trace_csv(const FitReport& r) {
  std::string out = "step,objective,param_change\n";
  const std::size_t n = std::max(r.objective.size(), r.param_change.size());
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i) + "," + (i < r.objective.size() ? format_double(r.objective[i]) : "NA") + "," +
           (i < r.param_change.size() ? format_double(r.param_change[i]) : "NA") + "\n";
  }
  return out;
}

std::string state_means_csv(const std::vector<double>& means) {
  std::string out = "state,mu_y\n";
  for (std::size_t s = 0; s < means.size(); ++s) out += std::to_string(s + 1) + "," + format_double(means[s]) + "\n";
  return out;
}

// ---- subcommands ----

void run_phantom(Flags& f, const fs::path& dir, RunRecord& rec) {
  PhantomSpec spec = phantom_spec_from_json(read_json(f.spec));
  rec.inputs.push_back(f.spec);
  if (f.fit.given("--seed")) spec.seed = f.fit.seed;
  if (f.n_heads > 0) spec.n_heads = f.n_heads;
  rec.config = phantom_spec_to_json(spec);

  const auto heads = generate_ensemble(spec, f.fit.workers);
  fs::create_directories(dir / "labels");
  std::string summary = "head,voxels,same_label_fraction";
  for (std::size_t k = 0; k < spec.states(); ++k) summary += ",count_" + std::to_string(k + 1);
  summary += "\n";
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::string id = std::to_string(h);
    save_output_volume(rec, dir, "head_" + id, heads[h].volume);
    save_output_volume(rec, dir, "labels/labels_" + id, label_volume(heads[h]));
    std::vector<std::size_t> counts(spec.states(), 0);
    std::size_t voxels = 0;
    for (auto z : heads[h].labels) {
      if (z == kNoLabel) continue;
      ++counts[z];
      ++voxels;
    }
    summary += id + "," + std::to_string(voxels) + "," + format_double(same_label_fraction(heads[h]));
    for (auto c : counts) summary += "," + std::to_string(c);
    summary += "\n";
  }
  write_output(rec, dir, "labels/spec.json", phantom_spec_to_json(spec).dump(2) + "\n");
  write_output(rec, dir, "summary.csv", summary);
}

void run_sequence(Flags& f, const fs::path& dir, RunRecord& rec) {
  if (f.volumes.size() != 1) throw CLI::ValidationError("sequence takes exactly one --volume");
  const Volume v = load_volume(f.volumes.front());
  record_volume(rec, f.volumes.front());
  const SequencedData seq = sequence_volume(v, {}, sequence_options(f.fit));
  const SequenceStats st = seq.stats();
  rec.config = {{"hilbert_order", seq.hilbert_order}, {"offset", seq.offset}};

  std::string segs = "segment,start,length,first_voxel,last_voxel\n";
  for (std::size_t s = 0; s < seq.segment_count(); ++s) {
    const auto b = seq.segment_begin(s), len = seq.segment_length(s);
    segs += std::to_string(s) + "," + std::to_string(b) + "," + std::to_string(len) + "," +
            std::to_string(seq.voxels[b]) + "," + std::to_string(seq.voxels[b + len - 1]) + "\n";
  }
  write_output(rec, dir, "segments.csv", segs);

  std::string stats = "voxels,segments,singletons,max_length,two_neighbour_fraction,hilbert_order,offset_x,offset_y,offset_z\n";
  stats += std::to_string(st.voxels) + "," + std::to_string(st.segments) + "," + std::to_string(st.singletons) + "," +
           std::to_string(st.max_length) + "," + format_double(st.two_neighbour_fraction) + "," +
           std::to_string(seq.hilbert_order) + "," + std::to_string(seq.offset[0]) + "," +
           std::to_string(seq.offset[1]) + "," + std::to_string(seq.offset[2]) + "\n";
  write_output(rec, dir, "sequence_stats.csv", stats);

  std::string hist = "length,count\n";
  for (const auto& [len, count] : st.length_histogram) hist += std::to_string(len) + "," + std::to_string(count) + "\n";
  write_output(rec, dir, "segment_lengths.csv", hist);
}

void run_fit(Flags& f, Family family, const fs::path& dir, RunRecord& rec) {
  if (f.volumes.empty()) throw CLI::ValidationError("fit needs at least one --volume");
  std::vector<Volume> heads;
  for (const auto& p : f.volumes) {
    heads.push_back(load_volume(p));
    record_volume(rec, p);
  }
  std::vector<const Volume*> ptrs;
  for (const auto& h : heads) ptrs.push_back(&h);
  const FitConfig cfg = fit_config(f.fit, family);
  rec.config = config_json(cfg);
  const Model model = fit_model(ptrs, cfg);
  write_output(rec, dir, "model.json", model_to_json(model).dump(2) + "\n");
  write_output(rec, dir, "fit_trace.csv", fit_trace_csv(model.report));
  write_output(rec, dir, "group_means.csv", state_means_csv(group_mean_table(model)));
}

void run_predict(Flags& f, const fs::path& dir, RunRecord& rec) {
  if (f.volumes.size() != 1) throw CLI::ValidationError("predict takes exactly one --volume");
  const Model model = load_model(f.model);
  rec.inputs.push_back(f.model);
  const Volume v = load_volume(f.volumes.front());
  record_volume(rec, f.volumes.front());
  FitConfig cfg = fit_config(f.fit, model.family);
  rec.config = config_json(cfg);
  rec.config["model_channels"] = {{"target", model.channels.target}, {"covariates", model.channels.covariates}};

  const Prediction p = predict_model(model, v, cfg);
  VolumeHeader h = v.header();
  h.channels = {kMaskChannel, f.prediction_channel};
  const auto n = static_cast<std::size_t>(h.voxel_count());
  std::vector<float> data(2 * n, 0.0f);
  std::string csv = "voxel,x,y,z,sct\n";
  for (std::size_t i = 0; i < p.voxels.size(); ++i) {
    const auto id = static_cast<std::size_t>(p.voxels[i]);
    data[id] = 1.0f;
    data[n + id] = static_cast<float>(p.values[i]);
    const auto c = v.coords(p.voxels[i]);
    csv += std::to_string(p.voxels[i]) + "," + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
           std::to_string(c[2]) + "," + format_double(p.values[i]) + "\n";
  }
  save_output_volume(rec, dir, "sct", Volume(std::move(h), std::move(data)));
  write_output(rec, dir, "prediction.csv", csv);
}

void run_evaluate(Flags& f, const fs::path& dir, RunRecord& rec) {
  if (f.volumes.size() != 1) throw CLI::ValidationError("evaluate takes exactly one --volume");
  const Volume truth = load_volume(f.volumes.front());
  record_volume(rec, f.volumes.front());
  const Volume pred = load_volume(f.prediction);
  record_volume(rec, f.prediction);
  if (truth.dims() != pred.dims()) throw DataError("truth and prediction volumes differ in dims");
  rec.config = {{"target", f.fit.target}, {"prediction_channel", f.prediction_channel}, {"window", f.window}};

  const auto voxels = truth.masked_voxels();
  const auto ct = truth_at(truth, f.fit.target, voxels);
  const auto sct = truth_at(pred, f.prediction_channel, voxels);
  write_output(rec, dir, "mae.csv", "voxels,mae\n" + std::to_string(voxels.size()) + "," + format_double(mae(ct, sct)) + "\n");
  write_output(rec, dir, "residual_bins.csv", residual_bins_csv(smoothed_residuals(ct, sct, f.window)));
}

void run_loocv_cmd(Flags& f, const fs::path& dir, RunRecord& rec) {
  std::vector<Volume> heads;
  for (const auto& p : ensemble_members(f.ensemble)) {
    heads.push_back(load_volume(p));
    record_volume(rec, p);
  }
  LoocvOptions opt;
  opt.fit = fit_config(f.fit, parse_family(f.fit.family));
  opt.window_width = f.window;
  rec.config = config_json(opt.fit);
  rec.config["window"] = f.window;
  rec.config["heads"] = heads.size();

  const LoocvReport r = run_loocv(heads, opt);
  write_output(rec, dir, "mae_matrix.csv", mae_matrix_csv(r));
  write_output(rec, dir, "residual_bins.csv", residual_bins_csv(r.residuals));
  write_output(rec, dir, "group_means.csv", group_means_csv(r));
  std::string summary = "head,held_out_mae,baseline_mae,chosen_start,error\n";
  for (std::size_t i = 0; i < heads.size(); ++i) {
    std::string error = r.fold_error[i];
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    summary += std::to_string(i) + "," + (r.held_out[i] ? format_double(*r.held_out[i]) : "NA") + "," +
               format_double(r.baseline_mae[i]) + "," + r.chosen_start[i] + "," + error + "\n";
  }
  write_output(rec, dir, "summary.csv", summary);
}

// Argument list that re-creates this run: every option given, paths made
// absolute, --out left for the caller.
std::vector<std::string> canonical_args(const CLI::App* sub) {
  std::vector<std::string> out;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->count() == 0) continue;
    const std::string name = opt->get_name(false, false);
    if (name == "--help" || name == "-h" || name == "--out") continue;
    if (opt->get_type_size() == 0) {
      out.push_back(name);
      continue;
    }
    out.push_back(name);
    for (const auto& r : opt->results()) {
      out.push_back(kPathOptions.contains(name) ? fs::absolute(r).lexically_normal().string() : r);
    }
  }
  return out;
}

json seeds_json(std::uint64_t root) {
  return {{"root", root},
          {"rule", "derive_seed(root, stream) = mix64(root ^ mix64(stream + 1)), mix64 = splitmix64 finalizer"},
          {"streams",
           {{"kmeans", streams::kmeans},
            {"hierarchical", streams::hierarchical},
            {"gibbs", streams::gibbs},
            {"phantom", streams::phantom},
            {"ensemble", streams::ensemble}}}};
}

void print_error(std::ostream& err, const std::string& kind, int code, const std::string& message) {
  err << json{{"status", "error"}, {"kind", kind}, {"exit_code", code}, {"message", message}}.dump() << "\n";
}

int replay(const fs::path& manifest_path, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const json m = read_json(manifest_path);
  try {
    if (m.at("schema_version").get<int>() != kManifestSchemaVersion)
      throw DataError("unsupported manifest schema_version " + m.at("schema_version").dump());
    for (const auto& in : m.at("inputs")) {
      const auto path = in.at("path").get<std::string>();
      if (file_digest(path) != in.at("fnv1a64").get<std::string>())
        throw DataError("input " + path + " changed since the manifest was written");
    }
    std::vector<std::string> args{m.at("subcommand").get<std::string>()};
    for (const auto& a : m.at("args")) args.push_back(a.get<std::string>());
    args.push_back("--out");
    args.push_back(out_dir);
    return run(args, out, err);
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudo-CT estimation with latent-class regression models", "pseudoct"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PSEUDOCT_VERSION);
  Flags f;

  auto common = [&](CLI::App* sub, bool out_required = true) {
    auto* o = sub->add_option("--out", f.out, "output directory");
    if (out_required) o->required();
    sub->add_option("--seed", f.fit.seed, "root seed");
    sub->add_option("--workers", f.fit.workers, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* phantom = app.add_subcommand("phantom", "generate synthetic heads from a phantom spec");
  common(phantom);
  phantom->add_option("--spec", f.spec, "phantom spec JSON")->required()->check(CLI::ExistingFile);
  phantom->add_option("--n-heads", f.n_heads, "override n_heads from the phantom file")->check(CLI::PositiveNumber);

  auto* sequence = app.add_subcommand("sequence", "Hilbert-sequence a volume and report its segments");
  common(sequence);
  sequence->add_option("--volume", f.volumes, "input volume")->required();
  add_sequence_flags(sequence, f.fit);

  std::vector<std::pair<CLI::App*, Family>> fits;
  for (auto [name, family] : {std::pair{"fit-gmm", Family::gmm}, {"fit-hmm", Family::hmm}, {"fit-hmrf", Family::hmrf}}) {
    auto* sub = app.add_subcommand(name, "fit a " + to_string(family) + " model on one or more volumes");
    common(sub);
    sub->add_option("--volume", f.volumes, "training volume(s)")->required();
    add_fit_flags(sub, f.fit, false);
    fits.emplace_back(sub, family);
  }

  auto* predict = app.add_subcommand("predict", "predict the target channel of a volume");
  common(predict);
  predict->add_option("--model", f.model, "model JSON")->required()->check(CLI::ExistingFile);
  predict->add_option("--volume", f.volumes, "input volume")->required();
  predict->add_option("--prediction-channel", f.prediction_channel, "channel name of the written prediction");
  predict->add_option("--burn-in", f.fit.predict_burn_in, "Gibbs burn-in sweeps (hmrf)")->check(CLI::NonNegativeNumber);
  predict->add_option("--samples", f.fit.predict_samples, "Gibbs sample sweeps (hmrf)")->check(CLI::PositiveNumber);
  add_sequence_flags(predict, f.fit);

  auto* evaluate = app.add_subcommand("evaluate", "MAE and smoothed residuals of a prediction");
  common(evaluate);
  evaluate->add_option("--volume", f.volumes, "volume holding the true target")->required();
  evaluate->add_option("--prediction", f.prediction, "volume holding the prediction")->required();
  evaluate->add_option("--prediction-channel", f.prediction_channel, "prediction channel name");
  evaluate->add_option("--target", f.fit.target, "target channel");
  evaluate->add_option("--window", f.window, "residual window width")->check(CLI::PositiveNumber);

  auto* loocv = app.add_subcommand("loocv", "leave-one-head-out cross-validation over an ensemble");
  common(loocv);
  loocv->add_option("--ensemble", f.ensemble, "directory of head volumes")->required();
  loocv->add_option("--window", f.window, "residual window width")->check(CLI::PositiveNumber);
  add_fit_flags(loocv, f.fit, true);

  auto* replay_cmd = app.add_subcommand("replay", "re-run a manifest into a new output directory");
  replay_cmd->add_option("--manifest", f.manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", f.out, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", kExitUsage, e.what());
    const CLI::App* active = &app;
    for (const auto* sub : app.get_subcommands()) active = sub;
    err << active->help();
    return kExitUsage;
  }

  try {
    const CLI::App* active = app.get_subcommands().front();
    f.fit.active = active;
    if (*replay_cmd) return replay(f.manifest, f.out, out, err);

    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = f.out;
    fs::create_directories(dir);
    RunRecord rec;
    if (*phantom) {
      run_phantom(f, dir, rec);
    } else if (*sequence) {
      run_sequence(f, dir, rec);
    } else if (*predict) {
      run_predict(f, dir, rec);
    } else if (*evaluate) {
      run_evaluate(f, dir, rec);
    } else if (*loocv) {
      run_loocv_cmd(f, dir, rec);
    } else {
      for (auto [sub, family] : fits) {
        if (*sub) run_fit(f, family, dir, rec);
      }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json manifest;
    manifest["schema_version"] = kManifestSchemaVersion;
    manifest["tool"] = "pseudoct";
    manifest["version"] = PSEUDOCT_VERSION;
    manifest["subcommand"] = active->get_name();
    manifest["args"] = canonical_args(active);
    manifest["config"] = rec.config;
    manifest["seeds"] = seeds_json(f.fit.seed);
    json inputs = json::array();
    for (const auto& p : rec.inputs) {
      const auto abs = fs::absolute(p).lexically_normal().string();
      inputs.push_back({{"path", abs}, {"fnv1a64", file_digest(abs)}});
    }
    manifest["inputs"] = inputs;
    manifest["outputs"] = rec.outputs;
    manifest["wall_time_s"] = seconds;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << rec.outputs.size() << " file(s) to " << dir.string() << "\n";
    return kExitOk;
  } catch (const CLI::Error& e) {
    print_error(err, "usage", kExitUsage, e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    print_error(err, "data", kExitData, e.what());
    return kExitData;
  } catch (const NumericalError& e) {
    print_error(err, "numerical", kExitNumerical, e.what());
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    print_error(err, "data", kExitData, e.what());
    return kExitData;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace pseudoct::cli
