#include "srnr/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "srnr/config.hpp"
#include "srnr/degrade.hpp"
#include "srnr/error.hpp"
#include "srnr/experiment.hpp"
#include "srnr/metrics.hpp"
#include "srnr/nifti_io.hpp"
#include "srnr/rng.hpp"
#include "srnr/tensor_nn.hpp"
#include "srnr/text.hpp"
#include "srnr/train.hpp"
#include "srnr/volume.hpp"

namespace srnr::cli {

namespace fs = std::filesystem;

namespace {

struct BadArgs : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::Io, "input file not found: " + path);
}

void require_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create output directory " + dir.string());
}

void require_parent(const fs::path& file) {
  const auto parent = file.parent_path();
  if (!parent.empty()) require_output_dir(parent);
}

Dims parse_dims(const std::vector<std::size_t>& v, const char* flag) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw BadArgs(std::string(flag) + " needs one or three values");
}

BrainMask load_mask(const std::string& path) { return BrainMask::from_volume(nifti::read_nifti(path)); }

// Options shared by train, infer and sweep that map onto config keys.
struct ModelFlags {
  std::string config;
  std::optional<int> epochs, depth, width, factor, slice_axis;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch, patches_per_volume;
  std::vector<std::size_t> patch;
  std::string precision;

  void add(CLI::App* app, bool training) {
    app->add_option("--config", config, "key = value config file (flags override it)");
    app->add_option("--factor", factor, "thick-slice factor (default 5)");
    app->add_option("--slice-axis", slice_axis, "slice axis 0-2 (default 2)");
    app->add_option("--patch", patch, "patch size, one or three values")->delimiter(',');
    app->add_option("--precision", precision, "float32 or float64");
    if (!training) return;
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--depth", depth, "MU-Net depth");
    app->add_option("--width", width, "MU-Net width");
    app->add_option("--seed", seed, "training seed");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--patches-per-volume", patches_per_volume, "patches drawn per volume per epoch");
  }

  experiment::SweepSpec resolve() const {
    KeyValueConfig cfg;
    if (!config.empty()) {
      require_file(config);
      cfg = KeyValueConfig::load(config);
    }
    if (epochs) cfg.set("epochs", std::to_string(*epochs));
    if (depth) cfg.set("depth", std::to_string(*depth));
    if (width) cfg.set("width", std::to_string(*width));
    if (factor) cfg.set("factor", std::to_string(*factor));
    if (slice_axis) cfg.set("slice_axis", std::to_string(*slice_axis));
    if (seed) cfg.set("train_seed", std::to_string(*seed));
    if (lr) cfg.set("learning_rate", std::to_string(*lr));
    if (batch) cfg.set("batch_size", std::to_string(*batch));
    if (patches_per_volume) cfg.set("patches_per_volume", std::to_string(*patches_per_volume));
    if (!patch.empty()) {
      const Dims p = parse_dims(patch, "--patch");
      cfg.set("patch", std::to_string(p[0]) + "," + std::to_string(p[1]) + "," + std::to_string(p[2]));
    }
    if (!precision.empty()) cfg.set("precision", precision);
    auto spec = experiment::spec_from_config(cfg);
    spec.dspec.validate();
    spec.net_shape.validate();
    spec.train_cfg.validate();
    return spec;
  }
};

// ---------------------------------------------------------------------------

struct SimulateArgs {
  bool phantom = false;
  std::string input, mask, out = ".";
  std::vector<std::size_t> dims{64, 64, 60};
  std::uint64_t seed = 0;
  double sigma_rel = 0.0;
  int factor = 5, slice_axis = 2;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out, bool verbose) {
  if (a.phantom == !a.input.empty()) throw BadArgs("simulate needs exactly one of --phantom or --input");
  if (!a.mask.empty() && a.phantom) throw BadArgs("--mask only applies with --input");
  if (!(a.sigma_rel >= 0.0)) throw BadArgs("--sigma-rel must be >= 0");
  const DegradeSpec dspec{a.slice_axis, a.factor};
  dspec.validate();
  const Dims dims = parse_dims(a.dims, "--dims");
  if (!a.input.empty()) require_file(a.input);
  if (!a.mask.empty()) require_file(a.mask);
  require_output_dir(a.out);

  Volume3D hr;
  std::optional<BrainMask> mask;
  if (a.phantom) {
    PhantomSpec ps;
    ps.dims = dims;
    ps.seed = a.seed;
    auto [vol, m] = generate_phantom(ps);
    hr = std::move(vol);
    mask = std::move(m);
  } else {
    hr = nifti::read_nifti(a.input);
    mask = a.mask.empty() ? threshold_mask(hr) : load_mask(a.mask);
  }
  hr = normalize(hr, *mask).first;
  hr = crop_to_factor(hr, dspec);
  mask = crop_to_factor(*mask, dspec);

  const NoiseSpec nspec{0.0, a.sigma_rel, rng::derive(a.seed, "simulate-noise", 0)};
  const auto reference = add_gaussian_noise(hr, *mask, nspec);
  const auto low = downsample_slices(hr, dspec).volume;
  const auto up = degrade_input(hr, dspec);

  const fs::path dir(a.out);
  nifti::write_nifti(hr, dir / "ground_truth.nii");
  nifti::write_nifti(mask->to_volume(hr.spacing()), dir / "mask.nii");
  nifti::write_nifti(low, dir / "low_res.nii");
  nifti::write_nifti(up, dir / "upsampled.nii");
  nifti::write_nifti(reference, dir / "noisy_reference.nii");
  if (verbose) out << "wrote 5 volumes to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> hr, mask, reference;
  std::string out;
  double sigma_rel = 0.0;
  std::optional<std::uint64_t> noise_seed;
  ModelFlags model;
};

int cmd_train(const TrainArgs& a, std::ostream& out, bool verbose) {
  if (a.hr.empty()) throw BadArgs("train needs at least one --hr volume");
  if (!a.mask.empty() && a.mask.size() != a.hr.size()) throw BadArgs("--mask count must match --hr count");
  if (!a.reference.empty() && a.reference.size() != a.hr.size())
    throw BadArgs("--reference count must match --hr count");
  if (!a.reference.empty() && a.sigma_rel != 0.0) throw BadArgs("--sigma-rel cannot be combined with --reference");
  if (!(a.sigma_rel >= 0.0)) throw BadArgs("--sigma-rel must be >= 0");
  const auto spec = a.model.resolve();
  for (const auto* list : {&a.hr, &a.mask, &a.reference})
    for (const auto& p : *list) require_file(p);
  require_parent(a.out);

  std::vector<Volume3D> hr;
  std::vector<BrainMask> masks;
  for (std::size_t i = 0; i < a.hr.size(); ++i) {
    auto v = nifti::read_nifti(a.hr[i]);
    auto m = a.mask.empty() ? threshold_mask(v) : load_mask(a.mask[i]);
    hr.push_back(crop_to_factor(v, spec.dspec));
    masks.push_back(crop_to_factor(m, spec.dspec));
  }

  const std::uint64_t noise_seed = a.noise_seed.value_or(rng::derive(spec.train_cfg.seed, "cli-noise", 0));
  train::TrainResult result;
  if (a.reference.empty()) {
    const NoiseSpec nspec{0.0, a.sigma_rel, noise_seed};
    result = train::train_model(hr, masks, spec.dspec, nspec, spec.net_shape, spec.train_cfg);
  } else {
    std::vector<train::PairData> pairs;
    for (std::size_t i = 0; i < hr.size(); ++i) {
      auto ref = crop_to_factor(nifti::read_nifti(a.reference[i]), spec.dspec);
      auto pair = make_training_pair_from_reference(hr[i], ref, spec.dspec);
      pairs.push_back({std::move(pair.input), std::move(pair.target_residual), masks[i]});
    }
    result = train::train_on_pairs(pairs, spec.net_shape, spec.train_cfg);
  }
  nn::save_checkpoint(result.net, spec.train_cfg.seed, a.out);

  // Provenance next to the checkpoint: loss curve and the resolved run config.
  const auto f = text::format_double;
  std::string curve = "epoch,mean_train_loss,mean_val_loss\n";
  for (const auto& e : result.curve)
    curve += std::to_string(e.epoch) + "," + f(e.train_loss) + "," + f(e.val_loss) + "\n";
  text::write_file(a.out + ".loss.csv", curve);
  auto run_cfg = experiment::spec_to_config(spec);
  for (std::size_t i = 0; i < a.hr.size(); ++i) {
    run_cfg.set("hr_" + std::to_string(i), a.hr[i]);
    if (!a.mask.empty()) run_cfg.set("mask_" + std::to_string(i), a.mask[i]);
    if (!a.reference.empty()) run_cfg.set("reference_" + std::to_string(i), a.reference[i]);
  }
  if (a.reference.empty()) {
    run_cfg.set("train_sigma_rel", f(a.sigma_rel));
    run_cfg.set("noise_seed", std::to_string(noise_seed));
  }
  run_cfg.set("relaxed_patches", std::to_string(result.relaxed_patches));
  text::write_file(a.out + ".config.txt", run_cfg.serialize());
  if (verbose)
    for (const auto& e : result.curve)
      out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, input, out;
  bool upsampled = false;
  ModelFlags model;
};

int cmd_infer(const InferArgs& a, std::ostream& out, bool verbose) {
  const auto spec = a.model.resolve();
  require_file(a.checkpoint);
  require_file(a.input);
  require_parent(a.out);
  const auto ckpt = nn::load_checkpoint(a.checkpoint);
  const auto vol = nifti::read_nifti(a.input);
  const auto& cfg = spec.train_cfg;
  const auto pred = a.upsampled ? train::predict_volume(ckpt.net, vol, cfg.patch, cfg.precision)
                                : train::infer_volume(ckpt.net, vol, spec.dspec, cfg.patch, cfg.precision);
  nifti::write_nifti(pred, a.out);
  if (verbose) out << "wrote " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string a, b, mask, label;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  require_file(a.a);
  require_file(a.b);
  if (!a.mask.empty()) require_file(a.mask);
  const auto va = nifti::read_nifti(a.a);
  const auto vb = nifti::read_nifti(a.b);
  const auto mask = a.mask.empty() ? BrainMask::full(va.dims()) : load_mask(a.mask);
  const std::string label = a.label.empty() ? fs::path(a.a).stem().string() : a.label;
  out << metrics::format_row(metrics::evaluate(label, va, vb, mask)) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string config, out = "report", study = "noise";
  std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out, bool verbose) {
  if (a.study != "noise" && a.study != "average") throw BadArgs("--study must be noise or average");
  KeyValueConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config);
    cfg = KeyValueConfig::load(a.config);
  }
  if (a.seed) cfg.set("master_seed", std::to_string(*a.seed));
  const auto spec = experiment::spec_from_config(cfg);
  if (a.study == "noise")
    spec.validate_sweep();
  else
    spec.validate_average();
  require_output_dir(a.out);
  const auto report =
      a.study == "noise" ? experiment::run_noise_sweep(spec) : experiment::run_average_study(spec.k_values, spec);
  experiment::emit_report(report, a.out);
  if (verbose) out << experiment::format_table(report.table_d);
  return report.failures.empty() ? kOk : kProcessingError;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidSpec:
      return kBadArgs;
    case ErrorCode::Io:
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::UnsupportedDatatype:
    case ErrorCode::UnsupportedShape:
      return kIoError;
    default:
      return kProcessingError;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Super-resolution training with noisy reference data", "srnr"};
  app.require_subcommand(1, 1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "print progress to standard output");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate or degrade a volume into low-res / upsampled / noisy triplets");
  s->add_flag("--phantom", sim.phantom, "generate a procedural phantom");
  s->add_option("--input", sim.input, "high-resolution NIfTI to degrade instead of a phantom");
  s->add_option("--mask", sim.mask, "brain mask NIfTI for --input (default: threshold mask)");
  s->add_option("--dims", sim.dims, "phantom dims, one or three values")->delimiter(',');
  s->add_option("--seed", sim.seed, "phantom and noise seed");
  s->add_option("--sigma-rel", sim.sigma_rel, "noise std relative to masked intensity std");
  s->add_option("--factor", sim.factor, "thick-slice factor");
  s->add_option("--slice-axis", sim.slice_axis, "slice axis 0-2");
  s->add_option("--out", sim.out, "output directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a MU-Net and write a checkpoint");
  t->add_option("--hr", tr.hr, "normalized high-resolution volumes (repeatable)")->required();
  t->add_option("--mask", tr.mask, "brain masks, one per --hr");
  t->add_option("--reference", tr.reference, "noisy reference volumes, one per --hr");
  t->add_option("--sigma-rel", tr.sigma_rel, "simulated reference noise when no --reference is given");
  t->add_option("--noise-seed", tr.noise_seed, "seed for simulated reference noise");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  tr.model.add(t, true);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "run a checkpoint on a thick-slice volume");
  i->add_option("--checkpoint", inf.checkpoint, "checkpoint path")->required();
  i->add_option("--input", inf.input, "thick-slice NIfTI")->required();
  i->add_flag("--upsampled", inf.upsampled, "input is already on the fine grid");
  i->add_option("--out", inf.out, "output NIfTI")->required();
  inf.model.add(i, false);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "print label,mae,psnr_db,ssim for two volumes");
  e->add_option("--a", ev.a, "output volume")->required();
  e->add_option("--b", ev.b, "reference volume")->required();
  e->add_option("--mask", ev.mask, "brain mask (default: whole volume)");
  e->add_option("--label", ev.label, "row label (default: stem of --a)");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "run the noise sweep or the average study and write a report directory");
  w->add_option("--config", sw.config, "key = value config file");
  w->add_option("--out", sw.out, "report directory");
  w->add_option("--study", sw.study, "noise or average");
  w->add_option("--seed", sw.seed, "master seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    if (pe.get_exit_code() == 0) {
      app.exit(pe, out, err);
      return kOk;
    }
    app.exit(pe, out, err);
    return kBadArgs;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out, verbose);
    if (t->parsed()) return cmd_train(tr, out, verbose);
    if (i->parsed()) return cmd_infer(inf, out, verbose);
    if (e->parsed()) return cmd_evaluate(ev, out);
    return cmd_sweep(sw, out, verbose);
  } catch (const BadArgs& ex) {
    err << "error: " << ex.what() << "\n";
    return kBadArgs;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code(ex.code());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kProcessingError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kProcessingError;
  }
}

}  // namespace srnr::cli
