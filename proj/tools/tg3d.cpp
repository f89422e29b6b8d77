// tg3d: synthesize toy data, train, generate, manipulate, invert, and evaluate.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tg3d/archive.hpp"
#include "tg3d/data.hpp"
#include "tg3d/guidance.hpp"
#include "tg3d/metrics.hpp"
#include "tg3d/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tg3d;

namespace {

void write_json(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

json run_record(const std::vector<std::string>& args, const std::string& config_hash, const fs::path& checkpoint) {
  json j = {{"args", args}, {"config_hash", config_hash}};
  j["checkpoint"] = checkpoint.empty() ? json(nullptr) : json(checkpoint.filename().string());
  j["checkpoint_hash"] = checkpoint.empty() ? json(nullptr) : json(content_hash(checkpoint));
  return j;
}

void write_run_record(const fs::path& dir, const std::vector<std::string>& args, const std::string& config_hash,
                      const fs::path& checkpoint) {
  write_json(dir / "run.json", run_record(args, config_hash, checkpoint));
}

std::string hex_hash(uint64_t h) { return fmt::format("{:016x}", h); }

std::vector<double> seeded_z(uint64_t seed, int dim) {
  Rng rng(seed);
  return rng.normal_vector(static_cast<size_t>(dim));
}

Image render_view(const Generator& g, std::span<const double> z, const Embedding& e, const CameraParams& cam,
                  const CameraParams& cond, int res) {
  NoGradGuard no_grad;
  const Tensor zt = Tensor::from({1, static_cast<int>(z.size())}, {z.begin(), z.end()});
  const Tensor et = Tensor::from({1, e.dim()}, e.values);
  return to_image(g.forward(zt, et, std::span(&cam, 1), std::span(&cond, 1), res).image);
}

std::vector<Image> render_ring(const Generator& g, std::span<const double> z, const Embedding& e,
                               const PoseDistribution& poses, int n_views, int res) {
  std::vector<Image> views;
  for (const auto& cam : poses.ring(n_views)) views.push_back(quantize8(render_view(g, z, e, cam, poses.canonical(), res)));
  return views;
}

std::string default_data_root() {
  const char* env = std::getenv("TG3D_DATA");
  return env ? env : "";
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
  int n = 2000;
  uint64_t seed = 0;
  int res = 32;
  double unlabeled = 0.0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  SynthOptions opts;
  opts.image_res = a.res;
  opts.unlabeled_fraction = a.unlabeled;
  const auto m = synthesize_toy_dataset(a.n, a.seed, a.out, opts);
  write_run_record(a.out, argv, "", {});
  fmt::print("wrote {} records to {}\n", m.records.size(), a.out);
  return 0;
}

struct TrainArgs {
  std::string data = default_data_root();
  std::string out;
  std::string config;
  std::string resume;
  int steps = -1;
  int batch = -1;
  int64_t seed = -1;
  int checkpoint_every = -1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  if (a.data.empty()) throw CLI::RequiredError("--data");
  TrainConfig cfg = a.config.empty() ? TrainConfig() : TrainConfig::load(a.config);
  if (a.steps >= 0) cfg.steps = a.steps;
  if (a.batch > 0) cfg.batch = a.batch;
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  if (a.checkpoint_every >= 0) cfg.checkpoint_every = a.checkpoint_every;
  cfg.finalize();
  cfg.validate();
  const Dataset data = load_images(load_dataset(a.data));
  Trainer trainer = [&] {
    if (a.resume.empty()) return Trainer(cfg);
    if (!a.config.empty()) throw std::runtime_error("--resume takes its config from the checkpoint");
    Trainer t = Trainer::load(a.resume);
    if (a.steps >= 0) t.set_step_budget(a.steps);
    return t;
  }();
  fs::create_directories(a.out);
  TrainRunOptions opts;
  opts.out_dir = a.out;
  if (!a.quiet) {
    opts.on_step = [](const StepLog& log) {
      if (log.step % 50 == 0) {
        fmt::print("step {:5d}  d {:.4f}  g {:.4f}  cl {:.4f}  fg {:.4f}  r1 {:.4f}  res {}\n", log.step, log.d_loss,
                   log.g_loss, log.l_cl, log.l_fg, log.r1, log.res);
        std::fflush(stdout);
      }
    };
  }
  train(trainer, data, opts);
  write_run_record(a.out, argv, hex_hash(trainer.config().hash()), fs::path(a.out) / "final.ckpt");
  fmt::print("wrote {}\n", (fs::path(a.out) / "final.ckpt").string());
  return 0;
}

struct GenerateArgs {
  std::string ckpt;
  std::string text;
  uint64_t seed = 0;
  int n_views = 8;
  int mesh_res = 48;
  double iso = 10.0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv) {
  const Trainer t = Trainer::load(a.ckpt);
  const Generator& g = t.generator();
  const auto z = seeded_z(a.seed, g.config().z_dim);
  const TextInput text(a.text);
  const Embedding e = t.text_encoder().encode(text);
  const int res = t.current_render_res();
  fs::create_directories(a.out);
  const auto views = render_ring(g, z, e, t.config().poses, a.n_views, res);
  json sidecar = {{"text", a.text}, {"seed", a.seed}, {"render_res", res}, {"views", json::array()}};
  for (size_t i = 0; i < views.size(); ++i) {
    const std::string name = fmt::format("view_{:02d}.png", i);
    write_png(fs::path(a.out) / name, views[i]);
    json v = {{"file", name}};
    v["clip_score"] = t.judge().fitted() ? json(clip_score(t.judge().image_encoder().encode_image(views[i]), e)) : json(nullptr);
    sidecar["views"].push_back(v);
  }
  write_obj(fs::path(a.out) / "mesh.obj", [&] {
    NoGradGuard no_grad;
    const CameraParams canon = t.config().poses.canonical();
    const Tensor w = g.map_latent(Tensor::from({1, g.config().z_dim}, z), Tensor::from({1, e.dim()}, e.values),
                                  camera_tensor(std::span(&canon, 1), g.config().camera_conditioning));
    Tensor planes = g.synthesize_planes(w);
    const auto& s = planes.shape();
    const TriPlane tp = TriPlane::from_tensor(reshape(planes, {s[1], s[2], s[3], s[4]}));
    return extract_mesh(tp, g.decoder(), a.mesh_res, a.iso);
  }());
  sidecar["mesh"] = "mesh.obj";
  sidecar["run"] = run_record(argv, hex_hash(t.config().hash()), a.ckpt);
  write_json(fs::path(a.out) / "generate.json", sidecar);
  return 0;
}

struct ManipulateArgs {
  std::string ckpt;
  std::string text;
  std::string style_base = "Photo";
  int iters = 100;
  double lr = 0.002;
  int poses_per_step = 4;
  uint64_t seed = 0;
  int n_views = 4;
  std::string out;
};

int cmd_manipulate(const ManipulateArgs& a, const std::vector<std::string>& argv) {
  Trainer t = Trainer::load(a.ckpt);
  if (!t.judge().fitted()) throw std::runtime_error("checkpoint has no fitted image encoder for guidance");
  const Generator& g = t.generator();
  const auto z = seeded_z(a.seed, g.config().z_dim);
  GuidanceOptions opts;
  opts.iters = a.iters;
  opts.lr = a.lr;
  opts.poses_per_step = a.poses_per_step;
  opts.render_res = t.current_render_res();
  opts.seed = a.seed;
  opts.poses = t.config().poses;
  const TextInput s_star(a.text);
  const GuidanceResult r =
      run_directional_guidance(g, s_star, TextInput(a.style_base), z, t.text_encoder(), t.judge().image_encoder(), opts);
  fs::create_directories(a.out);
  const Embedding e = t.text_encoder().encode(s_star);
  write_png(fs::path(a.out) / "before.png", tile_images(render_ring(g, z, e, opts.poses, a.n_views, opts.render_res), a.n_views));
  write_png(fs::path(a.out) / "after.png",
            tile_images(render_ring(r.tuned, z, e, opts.poses, a.n_views, opts.render_res), a.n_views));
  {
    std::ofstream csv(fs::path(a.out) / "loss.csv");
    csv << "iteration,dcg_loss\n";
    for (size_t i = 0; i < r.losses.size(); ++i) csv << fmt::format("{},{:.10g}\n", i, r.losses[i]);
  }
  t.load_generator(r.tuned);
  const fs::path ckpt = fs::path(a.out) / "tuned.ckpt";
  t.save(ckpt);
  write_run_record(a.out, argv, hex_hash(t.config().hash()), ckpt);
  if (!r.losses.empty()) fmt::print("dcg loss {:.4f} -> {:.4f}\n", r.losses.front(), r.losses.back());
  return 0;
}

struct InvertArgs {
  std::string ckpt;
  std::string image;
  double yaw = 0.0;
  double pitch = 0.0;
  int stage1 = 200;
  int stage2 = 100;
  std::string init_text;
  bool z_only = false;
  uint64_t seed = 0;
  int n_views = 4;
  std::string out;
};

int cmd_invert(const InvertArgs& a, const std::vector<std::string>& argv) {
  Trainer t = Trainer::load(a.ckpt);
  const Image target = read_png(a.image);
  const auto& poses = t.config().poses;
  const CameraParams cam = orbit_camera(a.yaw, a.pitch, poses.radius, poses.focal);
  InversionOptions opts;
  opts.stage1_iters = a.stage1;
  opts.stage2_iters = a.stage2;
  opts.optimize_text = !a.z_only;
  if (!a.init_text.empty()) opts.init_text = TextInput(a.init_text);
  opts.render_res = t.current_render_res();
  opts.seed = a.seed;
  const InversionResult r = invert_image(t.generator(), target, cam, t.text_encoder(),
                                         t.judge().fitted() ? &t.judge().image_encoder() : nullptr, opts);
  fs::create_directories(a.out);
  const Embedding e{r.e};
  std::vector<Image> views;
  for (const auto& c : poses.ring(a.n_views)) views.push_back(quantize8(render_view(r.tuned, r.z, e, c, cam, opts.render_res)));
  write_png(fs::path(a.out) / "views.png", tile_images(views, a.n_views));
  write_json(fs::path(a.out) / "inversion.json", {{"z", r.z},
                                                   {"e", r.e},
                                                   {"init_l2", r.init_l2},
                                                   {"stage1_l2", r.stage1_l2},
                                                   {"stage2_l2", r.stage2_l2},
                                                   {"aborted", r.aborted}});
  t.load_generator(r.tuned);
  const fs::path ckpt = fs::path(a.out) / "tuned.ckpt";
  t.save(ckpt);
  write_run_record(a.out, argv, hex_hash(t.config().hash()), ckpt);
  fmt::print("pixel L2 {:.5f} -> {:.5f} -> {:.5f}\n", r.init_l2, r.stage1_l2, r.stage2_l2);
  return r.aborted ? 1 : 0;
}

struct EvaluateArgs {
  std::string ckpt;
  std::string data = default_data_root();
  std::string out;
  int n_samples = 200;
  uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv) {
  if (a.data.empty()) throw CLI::RequiredError("--data");
  const Trainer t = Trainer::load(a.ckpt);
  if (!t.judge().fitted()) throw std::runtime_error("checkpoint has no fitted judge");
  const Dataset data = load_images(load_dataset(a.data));
  const Split split = training_split(data, t.config());
  EvalOptions opts;
  opts.n_samples = a.n_samples;
  opts.seed = a.seed;
  const HistogramIdentityEncoder identity(4, t.config().generator.render.background);
  const MetricsReport report = evaluate_generator(t.generator(), t.current_render_res(), t.judge(), data, split.held_out,
                                                  t.text_encoder(), identity, t.config().poses, opts);
  const json j = report.to_json();
  if (const auto err = validate_metrics_report(j); !err.empty()) throw std::runtime_error("invalid report: " + err);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(out, j);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  write_run_record(dir, argv, hex_hash(t.config().hash()), a.ckpt);
  fmt::print("{}\n", j.dump(2));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided 3D face generation on a toy procedural face domain"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv + 1, argv + argc);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "Render a procedural face dataset with captions, cameras, and part masks");
  synth->add_option("--n", sa.n, "Number of records")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--res", sa.res, "Image resolution")->check(CLI::PositiveNumber);
  synth->add_option("--unlabeled-fraction", sa.unlabeled, "Fraction of records without captions")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train generator, discriminator, and alignment module");
  trn->add_option("--data", ta.data, "Dataset root (default: $TG3D_DATA)");
  trn->add_option("--out", ta.out, "Output directory for checkpoints and train_log.jsonl")->required();
  trn->add_option("--config", ta.config, "JSON config file")->check(CLI::ExistingFile);
  trn->add_option("--resume", ta.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  trn->add_option("--steps", ta.steps, "Override the step budget")->check(CLI::NonNegativeNumber);
  trn->add_option("--batch", ta.batch, "Override the batch size")->check(CLI::PositiveNumber);
  trn->add_option("--seed", ta.seed, "Override the seed")->check(CLI::NonNegativeNumber);
  trn->add_option("--checkpoint-every", ta.checkpoint_every, "Write step checkpoints every N steps (0 = final only)")
      ->check(CLI::NonNegativeNumber);
  trn->add_flag("--quiet", ta.quiet, "No progress output");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Render a text-conditioned face from a pose ring and extract its mesh");
  gen->add_option("--ckpt", ga.ckpt, "Checkpoint")->required();
  gen->add_option("--text", ga.text, "Description")->required();
  gen->add_option("--seed", ga.seed, "Latent seed");
  gen->add_option("--n-views", ga.n_views, "Number of views")->check(CLI::PositiveNumber);
  gen->add_option("--mesh-res", ga.mesh_res, "Marching grid resolution")->check(CLI::Range(4, 256));
  gen->add_option("--iso", ga.iso, "Density iso-level for the mesh");
  gen->add_option("--out", ga.out, "Output directory")->required();

  ManipulateArgs ma;
  auto* man = app.add_subcommand("manipulate", "Fine-tune a generator copy toward a text style");
  man->add_option("--ckpt", ma.ckpt, "Checkpoint")->required();
  man->add_option("--text", ma.text, "Target style prompt")->required();
  man->add_option("--style-base", ma.style_base, "Prompt describing the training style");
  man->add_option("--iters", ma.iters, "Optimization iterations")->check(CLI::NonNegativeNumber);
  man->add_option("--lr", ma.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  man->add_option("--poses-per-step", ma.poses_per_step, "Camera poses per iteration")->check(CLI::PositiveNumber);
  man->add_option("--seed", ma.seed, "Latent and pose seed");
  man->add_option("--n-views", ma.n_views, "Views in the before/after grids")->check(CLI::PositiveNumber);
  man->add_option("--out", ma.out, "Output directory")->required();

  InvertArgs ia;
  auto* inv = app.add_subcommand("invert", "Reconstruct a face image as a latent pivot plus a tuned generator");
  inv->add_option("--ckpt", ia.ckpt, "Checkpoint")->required();
  inv->add_option("--image", ia.image, "Target PNG at the generator's output resolution")->required()->check(CLI::ExistingFile);
  inv->add_option("--yaw", ia.yaw, "Target camera yaw (radians)");
  inv->add_option("--pitch", ia.pitch, "Target camera pitch (radians)");
  inv->add_option("--stage1-iters", ia.stage1, "Latent optimization iterations")->check(CLI::NonNegativeNumber);
  inv->add_option("--stage2-iters", ia.stage2, "Generator tuning iterations")->check(CLI::NonNegativeNumber);
  inv->add_option("--init-text", ia.init_text, "Initialize the text embedding from this description");
  inv->add_flag("--z-only", ia.z_only, "Optimize z only in stage 1");
  inv->add_option("--seed", ia.seed, "Seed of the initial latent");
  inv->add_option("--n-views", ia.n_views, "Novel views to render")->check(CLI::PositiveNumber);
  inv->add_option("--out", ia.out, "Output directory")->required();

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint: MVIC, CLIP score, FID, attribute accuracy");
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  ev->add_option("--data", ea.data, "Dataset root (default: $TG3D_DATA)");
  ev->add_option("--out", ea.out, "Report path")->required();
  ev->add_option("--n-samples", ea.n_samples, "Generated samples for FID and accuracy")->check(CLI::PositiveNumber);
  ev->add_option("--seed", ea.seed, "Evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(sa, args);
    if (*trn) return cmd_train(ta, args);
    if (*gen) return cmd_generate(ga, args);
    if (*man) return cmd_manipulate(ma, args);
    if (*inv) return cmd_invert(ia, args);
    if (*ev) return cmd_evaluate(ea, args);
  } catch (const CLI::ParseError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 2;
}
