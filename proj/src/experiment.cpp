#include "srnr/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iostream>
#include <limits>
#include <functional>
#include <optional>
#include <sstream>

#include "srnr/error.hpp"
#include "srnr/nifti_io.hpp"
#include "srnr/rng.hpp"
#include "srnr/text.hpp"

namespace srnr::experiment {

namespace {

constexpr double kNoLevel = std::numeric_limits<double>::quiet_NaN();

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + text::format_double(v[i]);
  return s;
}

template <typename I>
std::string join_ints(const std::vector<I>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

Dims dims_from(const std::vector<long long>& v, const std::string& key) {
  if (v.size() == 1 && v[0] > 0) {
    const auto n = static_cast<std::size_t>(v[0]);
    return {n, n, n};
  }
  if (v.size() != 3 || v[0] <= 0 || v[1] <= 0 || v[2] <= 0)
    throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' needs one or three positive integers");
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2])};
}

std::vector<long long> dims_list(const Dims& d) {
  return {static_cast<long long>(d[0]), static_cast<long long>(d[1]), static_cast<long long>(d[2])};
}

std::string level_label(double sigma) { return sigma == 0.0 ? "clean" : "sigma_" + text::format_double(sigma); }

}  // namespace

void SweepSpec::validate_sweep() const {
  if (sigma_levels.empty() || sigma_levels.front() != 0.0)
    throw Error(ErrorCode::InvalidArgument, "sigma_levels must start with 0 (the clean-target baseline)");
  for (std::size_t i = 1; i < sigma_levels.size(); ++i)
    if (!(sigma_levels[i] > sigma_levels[i - 1]))
      throw Error(ErrorCode::InvalidArgument, "sigma_levels must be strictly ascending");
  if (n_train_volumes == 0 || n_eval_volumes == 0)
    throw Error(ErrorCode::InvalidArgument, "need at least one training and one evaluation volume");
  dspec.validate();
  net_shape.validate();
  train_cfg.validate();
}

void SweepSpec::validate_average() const {
  if (n_train_volumes == 0 || n_eval_volumes == 0)
    throw Error(ErrorCode::InvalidArgument, "need at least one training and one evaluation volume");
  if (!(average_sigma_rel >= 0.0)) throw Error(ErrorCode::InvalidArgument, "average_sigma_rel must be >= 0");
  dspec.validate();
  net_shape.validate();
  train_cfg.validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "sigma_levels", "n_train", "n_eval", "dims", "spacing", "n_ellipsoids", "shell_thickness", "shells",
      "intensity_levels", "slice_axis", "factor", "depth", "width", "patch", "batch_size", "learning_rate",
      "adam_beta1", "adam_beta2", "adam_eps", "epochs", "patches_per_volume", "train_seed", "precision",
      "min_mask_coverage", "master_seed", "k_values", "average_sigma_rel", "write_volumes"};
  return keys;
}

SweepSpec spec_from_config(const KeyValueConfig& cfg) {
  if (const auto unknown = cfg.unknown_keys(config_keys()); !unknown.empty())
    throw Error(ErrorCode::InvalidArgument, "unknown config key '" + unknown.front() + "'");
  SweepSpec s;
  s.sigma_levels = cfg.get_doubles("sigma_levels", s.sigma_levels);
  s.n_train_volumes = static_cast<std::size_t>(cfg.get_int("n_train", static_cast<long long>(s.n_train_volumes)));
  s.n_eval_volumes = static_cast<std::size_t>(cfg.get_int("n_eval", static_cast<long long>(s.n_eval_volumes)));
  s.phantom.dims = dims_from(cfg.get_ints("dims", dims_list(s.phantom.dims)), "dims");
  {
    const auto sp = cfg.get_doubles("spacing", {s.phantom.spacing[0], s.phantom.spacing[1], s.phantom.spacing[2]});
    if (sp.size() != 3) throw Error(ErrorCode::InvalidArgument, "config key 'spacing' needs three values");
    s.phantom.spacing = {sp[0], sp[1], sp[2]};
  }
  s.phantom.n_ellipsoids = static_cast<int>(cfg.get_int("n_ellipsoids", s.phantom.n_ellipsoids));
  s.phantom.shell_thickness_vox = static_cast<int>(cfg.get_int("shell_thickness", s.phantom.shell_thickness_vox));
  s.phantom.shells = cfg.get_int("shells", s.phantom.shells ? 1 : 0) != 0;
  s.phantom.intensity_levels = cfg.get_doubles("intensity_levels", s.phantom.intensity_levels);
  s.dspec.slice_axis = static_cast<int>(cfg.get_int("slice_axis", s.dspec.slice_axis));
  s.dspec.factor = static_cast<int>(cfg.get_int("factor", s.dspec.factor));
  s.net_shape.depth = static_cast<int>(cfg.get_int("depth", s.net_shape.depth));
  s.net_shape.width = static_cast<int>(cfg.get_int("width", s.net_shape.width));
  auto& t = s.train_cfg;
  t.patch = dims_from(cfg.get_ints("patch", dims_list(t.patch)), "patch");
  t.batch_size = static_cast<std::size_t>(cfg.get_int("batch_size", static_cast<long long>(t.batch_size)));
  t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
  t.adam_beta1 = cfg.get_double("adam_beta1", t.adam_beta1);
  t.adam_beta2 = cfg.get_double("adam_beta2", t.adam_beta2);
  t.adam_eps = cfg.get_double("adam_eps", t.adam_eps);
  t.epochs = static_cast<int>(cfg.get_int("epochs", t.epochs));
  t.patches_per_volume =
      static_cast<std::size_t>(cfg.get_int("patches_per_volume", static_cast<long long>(t.patches_per_volume)));
  t.precision = train::parse_precision(cfg.get_string("precision", train::to_string(t.precision)));
  t.min_mask_coverage = cfg.get_double("min_mask_coverage", t.min_mask_coverage);
  s.master_seed = static_cast<std::uint64_t>(cfg.get_int("master_seed", static_cast<long long>(s.master_seed)));
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train_seed", static_cast<long long>(s.master_seed)));
  {
    const auto ks = cfg.get_ints("k_values", {s.k_values.begin(), s.k_values.end()});
    s.k_values.assign(ks.begin(), ks.end());
  }
  s.average_sigma_rel = cfg.get_double("average_sigma_rel", s.average_sigma_rel);
  s.write_volumes = cfg.get_int("write_volumes", s.write_volumes ? 1 : 0) != 0;
  return s;
}

KeyValueConfig spec_to_config(const SweepSpec& s) {
  KeyValueConfig c;
  const auto& t = s.train_cfg;
  c.set("sigma_levels", join(s.sigma_levels));
  c.set("n_train", std::to_string(s.n_train_volumes));
  c.set("n_eval", std::to_string(s.n_eval_volumes));
  c.set("dims", join_ints(dims_list(s.phantom.dims)));
  c.set("spacing", join({s.phantom.spacing[0], s.phantom.spacing[1], s.phantom.spacing[2]}));
  c.set("n_ellipsoids", std::to_string(s.phantom.n_ellipsoids));
  c.set("shell_thickness", std::to_string(s.phantom.shell_thickness_vox));
  c.set("shells", s.phantom.shells ? "1" : "0");
  c.set("intensity_levels", join(s.phantom.intensity_levels));
  c.set("slice_axis", std::to_string(s.dspec.slice_axis));
  c.set("factor", std::to_string(s.dspec.factor));
  c.set("depth", std::to_string(s.net_shape.depth));
  c.set("width", std::to_string(s.net_shape.width));
  c.set("patch", join_ints(dims_list(t.patch)));
  c.set("batch_size", std::to_string(t.batch_size));
  c.set("learning_rate", text::format_double(t.learning_rate));
  c.set("adam_beta1", text::format_double(t.adam_beta1));
  c.set("adam_beta2", text::format_double(t.adam_beta2));
  c.set("adam_eps", text::format_double(t.adam_eps));
  c.set("epochs", std::to_string(t.epochs));
  c.set("patches_per_volume", std::to_string(t.patches_per_volume));
  c.set("train_seed", std::to_string(t.seed));
  c.set("precision", train::to_string(t.precision));
  c.set("min_mask_coverage", text::format_double(t.min_mask_coverage));
  c.set("master_seed", std::to_string(s.master_seed));
  c.set("k_values", join_ints(s.k_values));
  c.set("average_sigma_rel", text::format_double(s.average_sigma_rel));
  c.set("write_volumes", s.write_volumes ? "1" : "0");
  return c;
}

std::vector<Subject> make_subjects(const SweepSpec& spec, const std::string& role, std::size_t count) {
  std::vector<Subject> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec ps = spec.phantom;
    ps.seed = rng::derive(spec.master_seed, role + "-phantom", i);
    auto [vol, mask] = generate_phantom(ps);
    auto [norm, params] = normalize(vol, mask);
    out.push_back({crop_to_factor(norm, spec.dspec), crop_to_factor(mask, spec.dspec), ps.seed});
  }
  return out;
}

std::uint64_t level_noise_seed(std::uint64_t master_seed, double sigma_rel) {
  return rng::derive(master_seed, "noise-level", std::bit_cast<std::uint64_t>(sigma_rel));
}

Volume3D repetition_reference(const Volume3D& hr, const BrainMask& mask, double sigma_rel, std::uint64_t seed, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "repetition count must be >= 1");
  if (sigma_rel == 0.0) return hr;
  std::vector<Volume3D> reps;
  reps.reserve(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r)
    reps.push_back(add_gaussian_noise(hr, mask, {0.0, sigma_rel, rng::derive(seed, "repetition", r)}));
  return average_volumes(reps);
}

namespace {

// Shared evaluation state for both studies.
struct EvalSet {
  std::vector<Subject> subjects;
  std::vector<Volume3D> upsampled;
};

EvalSet make_eval_set(const SweepSpec& spec) {
  EvalSet e;
  e.subjects = make_subjects(spec, "eval", spec.n_eval_volumes);
  for (const auto& s : e.subjects) e.upsampled.push_back(degrade_input(s.hr, spec.dspec));
  return e;
}

std::string subject_id(std::size_t i) { return "eval_" + std::to_string(i); }

GroupRow score(const std::string& label, double level, const std::vector<Volume3D>& outputs,
               const std::vector<const Volume3D*>& references, const EvalSet& eval) {
  GroupRow row;
  row.label = label;
  row.level = level;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    row.subjects.push_back(metrics::evaluate(subject_id(i), outputs[i], *references[i], eval.subjects[i].mask));
  row.group = metrics::group_metrics(row.subjects);
  return row;
}

GroupRow failed_row(const std::string& label, double level, const std::string& why) {
  GroupRow row;
  row.label = label;
  row.level = level;
  row.failed = true;
  row.failure = why;
  return row;
}

void add_diff_volumes(SweepReport& report, const SweepSpec& spec, const std::string& label,
                      const std::vector<Volume3D>& outputs, const EvalSet& eval) {
  if (!spec.write_volumes) return;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    report.volumes.push_back({label + "_" + subject_id(i) + "_diff.nii", subtract(outputs[i], eval.subjects[i].hr)});
}

std::vector<const Volume3D*> ground_truth(const EvalSet& eval) {
  std::vector<const Volume3D*> refs;
  for (const auto& s : eval.subjects) refs.push_back(&s.hr);
  return refs;
}

std::vector<Volume3D> predict_all(const nn::MuNet& net, const SweepSpec& spec, const EvalSet& eval) {
  std::vector<Volume3D> out;
  for (const auto& up : eval.upsampled)
    out.push_back(train::predict_volume(net, up, spec.train_cfg.patch, spec.train_cfg.precision));
  return out;
}

void start_report(SweepReport& report, const SweepSpec& spec, const std::string& study, const EvalSet& eval) {
  report.study = study;
  auto cfg = spec_to_config(spec);
  cfg.set("study", study);
  report.run_config = cfg.serialize();
  report.config_hash = rng::hash_tag(report.run_config);
  report.table_d.push_back(score("upsampled", kNoLevel, eval.upsampled, ground_truth(eval), eval));
  add_diff_volumes(report, spec, "upsampled", eval.upsampled, eval);
}

// Trains one model; on divergence returns nullopt and annotates the report.
std::optional<train::TrainResult> train_level(SweepReport& report, const std::string& label,
                                              const std::function<train::TrainResult()>& run) {
  try {
    return run();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::TrainingDivergence) throw;
    report.failures.push_back(label + ": " + e.what());
    std::cerr << "warning: training for " << label << " diverged: " << e.what() << "\n";
    return std::nullopt;
  }
}

}  // namespace

SweepReport run_noise_sweep(const SweepSpec& spec) {
  spec.validate_sweep();
  const auto train_set = make_subjects(spec, "train", spec.n_train_volumes);
  const EvalSet eval = make_eval_set(spec);
  std::vector<Volume3D> hr;
  std::vector<BrainMask> masks;
  for (const auto& s : train_set) {
    hr.push_back(s.hr);
    masks.push_back(s.mask);
  }

  SweepReport report;
  start_report(report, spec, "noise", eval);
  std::vector<std::optional<std::vector<Volume3D>>> outputs;
  for (double sigma : spec.sigma_levels) {
    const std::string label = level_label(sigma);
    const NoiseSpec nspec{0.0, sigma, level_noise_seed(spec.master_seed, sigma)};
    auto result = train_level(report, label, [&] {
      return train::train_model(hr, masks, spec.dspec, nspec, spec.net_shape, spec.train_cfg);
    });
    if (!result) {
      report.table_d.push_back(failed_row(label, sigma, report.failures.back()));
      outputs.emplace_back(std::nullopt);
      continue;
    }
    report.losses.push_back({sigma, result->curve});
    auto preds = predict_all(result->net, spec, eval);
    report.table_d.push_back(score(label, sigma, preds, ground_truth(eval), eval));
    add_diff_volumes(report, spec, label, preds, eval);
    outputs.emplace_back(std::move(preds));
  }

  for (std::size_t l = 1; l < spec.sigma_levels.size(); ++l) {
    const double sigma = spec.sigma_levels[l];
    if (!outputs[0] || !outputs[l]) {
      report.table_e.push_back(failed_row(level_label(sigma), sigma, "missing model output"));
      continue;
    }
    std::vector<const Volume3D*> refs;
    for (const auto& v : *outputs[0]) refs.push_back(&v);
    report.table_e.push_back(score(level_label(sigma), sigma, *outputs[l], refs, eval));
  }
  return report;
}

SweepReport run_average_study(const std::vector<int>& k_values, const SweepSpec& spec) {
  spec.validate_average();
  if (k_values.empty() || k_values.front() != 1)
    throw Error(ErrorCode::InvalidArgument, "k_values must start with 1");
  for (std::size_t i = 1; i < k_values.size(); ++i)
    if (!(k_values[i] > k_values[i - 1])) throw Error(ErrorCode::InvalidArgument, "k_values must be strictly ascending");

  const auto train_set = make_subjects(spec, "train", spec.n_train_volumes);
  const EvalSet eval = make_eval_set(spec);
  SweepSpec recorded = spec;
  recorded.k_values = k_values;

  SweepReport report;
  start_report(report, recorded, "average", eval);
  std::vector<std::optional<std::vector<Volume3D>>> outputs;
  for (int k : k_values) {
    const std::string label = "k_" + std::to_string(k);
    std::vector<train::PairData> pairs;
    for (std::size_t v = 0; v < train_set.size(); ++v) {
      const auto& s = train_set[v];
      const std::uint64_t seed = rng::derive(spec.master_seed, "average-volume", v);
      auto ref = repetition_reference(s.hr, s.mask, spec.average_sigma_rel, seed, k);
      auto pair = make_training_pair_from_reference(s.hr, ref, spec.dspec);
      pairs.push_back({std::move(pair.input), std::move(pair.target_residual), s.mask});
    }
    auto result = train_level(report, label,
                              [&] { return train::train_on_pairs(pairs, spec.net_shape, spec.train_cfg); });
    if (!result) {
      report.table_d.push_back(failed_row(label, k, report.failures.back()));
      outputs.emplace_back(std::nullopt);
      continue;
    }
    report.losses.push_back({static_cast<double>(k), result->curve});
    auto preds = predict_all(result->net, spec, eval);
    report.table_d.push_back(score(label, k, preds, ground_truth(eval), eval));
    add_diff_volumes(report, spec, label, preds, eval);
    outputs.emplace_back(std::move(preds));
  }

  const std::size_t ref = k_values.size() - 1;
  for (std::size_t l = 0; l < ref; ++l) {
    const std::string label = "k_" + std::to_string(k_values[l]);
    if (!outputs[ref] || !outputs[l]) {
      report.table_e.push_back(failed_row(label, k_values[l], "missing model output"));
      continue;
    }
    std::vector<const Volume3D*> refs;
    for (const auto& v : *outputs[ref]) refs.push_back(&v);
    report.table_e.push_back(score(label, k_values[l], *outputs[l], refs, eval));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report files

std::string format_table(const std::vector<GroupRow>& rows) {
  std::string out = std::string(kTableHeader) + "\n";
  const auto f = text::format_double;
  for (const auto& r : rows) {
    const auto& g = r.group;
    out += r.label + "," + f(r.level) + "," + std::to_string(r.subjects.size()) + "," + f(g.mae.mean) + "," +
           f(g.mae.std_dev) + "," + f(g.psnr_db.mean) + "," + f(g.psnr_db.std_dev) + "," +
           std::to_string(g.psnr_db.count) + "," + f(g.ssim.mean) + "," + f(g.ssim.std_dev) + "," +
           (r.failed ? "failed" : "ok") + "\n";
  }
  return out;
}

std::vector<TableRow> parse_table(const std::string& csv) {
  std::vector<TableRow> rows;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kTableHeader)
    throw Error(ErrorCode::InvalidArgument, "table header mismatch");
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    if (f.size() != 11) throw Error(ErrorCode::InvalidArgument, "table row needs 11 fields: " + line);
    TableRow r;
    r.label = f[0];
    r.level = text::parse_double(f[1]);
    r.n = static_cast<std::size_t>(std::stoull(f[2]));
    r.mae_mean = text::parse_double(f[3]);
    r.mae_std = text::parse_double(f[4]);
    r.psnr_mean = text::parse_double(f[5]);
    r.psnr_std = text::parse_double(f[6]);
    r.psnr_finite = static_cast<std::size_t>(std::stoull(f[7]));
    r.ssim_mean = text::parse_double(f[8]);
    r.ssim_std = text::parse_double(f[9]);
    r.status = f[10];
    rows.push_back(r);
  }
  return rows;
}

namespace {

void append_curves(std::string& out, const char* table, const std::vector<GroupRow>& rows) {
  const auto f = text::format_double;
  for (const auto& r : rows)
    for (const auto& s : r.subjects) {
      const std::string prefix = std::string(table) + "," + f(r.level) + ",";
      out += prefix + "mae," + f(s.mae) + "," + s.label + "\n";
      out += prefix + "psnr_db," + f(s.psnr_db) + "," + s.label + "\n";
      out += prefix + "ssim," + f(s.ssim) + "," + s.label + "\n";
    }
}

}  // namespace

void emit_report(const SweepReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "volumes", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + (out_dir / "volumes").string() + ": " + ec.message());

  text::write_file(out_dir / "table_d.csv", format_table(report.table_d));
  text::write_file(out_dir / "table_e.csv", format_table(report.table_e));

  std::string curves = std::string(kCurvesHeader) + "\n";
  append_curves(curves, "d", report.table_d);
  append_curves(curves, "e", report.table_e);
  for (const auto& lc : report.losses)
    for (const auto& e : lc.epochs) {
      const std::string prefix = "loss," + text::format_double(lc.level) + ",";
      curves += prefix + "train_loss," + text::format_double(e.train_loss) + ",epoch_" + std::to_string(e.epoch) + "\n";
      curves += prefix + "val_loss," + text::format_double(e.val_loss) + ",epoch_" + std::to_string(e.epoch) + "\n";
    }
  text::write_file(out_dir / "curves.csv", curves);

  std::string cfg = report.run_config;
  cfg += "config_hash = " + std::to_string(report.config_hash) + "\n";
  for (std::size_t i = 0; i < report.failures.size(); ++i)
    cfg += "failure_" + std::to_string(i) + " = " + report.failures[i] + "\n";
  text::write_file(out_dir / "run_config.txt", cfg);

  for (const auto& nv : report.volumes) nifti::write_nifti(nv.volume, out_dir / "volumes" / nv.name);
}

}  // namespace srnr::experiment
