// coronagan: phantom generation, training, inference, evaluation, loss plots.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coronagan/checkpoint.hpp"
#include "coronagan/evaluation.hpp"
#include "coronagan/inference.hpp"
#include "coronagan/phantom.hpp"
#include "coronagan/plot.hpp"
#include "coronagan/training.hpp"

namespace fs = std::filesystem;
using namespace coronagan;

namespace {

// A run directory resolves to its newest checkpoint.
fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::exists(p / "model.json")) return p;
  if (auto latest = train::latest_checkpoint(p); !latest.empty()) return latest;
  throw IoError("no checkpoint at " + p.string() +
                " (expected model.json or checkpoints/epoch_NNNN); run `coronagan train` first");
}

struct GenArgs {
  int n_oct = 100;
  int n_hist = 100;
  fs::path out;
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int threads = 0;
};

int gen_phantoms(const GenArgs& a) {
  phantom::PhantomDistribution dist;
  dist.height = a.height;
  dist.width = a.width;
  std::cout << "gen-phantoms n_oct=" << a.n_oct << " n_hist=" << a.n_hist << " height=" << a.height
            << " width=" << a.width << " out=" << a.out.string() << "\nseed = " << a.seed << '\n';
  const auto manifest = phantom::generate_dataset(a.n_oct, a.n_hist, dist, a.out, a.seed, a.threads);
  std::cout << "wrote " << manifest.records.size() << " samples and "
            << (a.out / "manifest.jsonl").string() << '\n';
  return 0;
}

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

int run_train(const TrainArgs& a) {
  train::TrainingConfig cfg = a.config.empty() ? train::TrainingConfig{} : train::load_config(a.config);
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();
  std::cout << "# resolved training config\n" << train::format_config(cfg) << "# seed = " << cfg.seed
            << '\n';
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / "config.txt") << train::format_config(cfg);
  const auto manifest = phantom::read_manifest(a.data);
  train::TrainOptions opts;
  opts.resume = a.resume;
  opts.log = &std::cout;
  const auto final_dir = train::train(cfg, manifest, opts);
  std::cout << "final checkpoint " << final_dir.string() << '\n';
  return 0;
}

struct InferArgs {
  fs::path checkpoint;
  std::vector<fs::path> inputs;
  std::string direction = "O2H";
  fs::path out;
  bool no_montage = false;
  bool pad = false;
};

int run_infer(const InferArgs& a) {
  const fs::path ckpt = resolve_checkpoint(a.checkpoint);
  infer::InferOptions opts;
  opts.direction = infer::parse_direction(a.direction);
  opts.montage = !a.no_montage;
  opts.pad_to_multiple = a.pad;
  std::cout << "infer checkpoint=" << ckpt.string() << " direction=" << infer::to_string(opts.direction)
            << " montage=" << opts.montage << " pad_to_multiple=" << opts.pad_to_multiple
            << " out=" << a.out.string() << "\nseed = none (inference is deterministic)\n";
  const auto model = io::load_model(ckpt);
  const auto results = infer::run(model, a.inputs, a.out, opts);
  for (const auto& r : results) std::cout << r.input.string() << " -> " << r.output.string() << '\n';
  return 0;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  double threshold = eval::kDefaultThreshold;
  fs::path out = "report.json";
  std::string pairing = "all-pairs";
  std::string extractor = "auto";
  fs::path extractor_path;
  std::uint64_t seed = 0;
  int threads = 0;
};

int run_evaluate(const EvalArgs& a) {
  const fs::path ckpt = resolve_checkpoint(a.checkpoint);
  std::unique_ptr<eval::FeatureExtractor> extractor;
  const bool have_path = !a.extractor_path.empty() || std::getenv("CORONAGAN_EXTRACTOR_PATH");
  if (a.extractor == "resnet" || (a.extractor == "auto" && have_path)) {
    extractor = eval::load_pretrained_extractor(a.extractor_path);
  } else if (a.extractor == "fallback" || a.extractor == "auto") {
    extractor = std::make_unique<eval::FallbackExtractor>(eval::FallbackExtractor::Options{a.seed});
  } else {
    throw ValidationError("unknown extractor '" + a.extractor + "' (auto, fallback or resnet)");
  }
  eval::EvaluateOptions opts;
  opts.threshold = a.threshold;
  opts.pairing = eval::parse_pairing(a.pairing);
  opts.threads = a.threads;
  std::cout << "evaluate checkpoint=" << ckpt.string() << " data=" << a.data.string()
            << " T=" << opts.threshold << " pairing=" << eval::to_string(opts.pairing)
            << " extractor=" << extractor->name() << " out=" << a.out.string()
            << "\nseed = " << a.seed << '\n';
  if (extractor->name() == "fallback") {
    std::cout << "note: using the seeded fallback extractor; set CORONAGAN_EXTRACTOR_PATH for "
                 "pretrained ResNet features\n";
  }
  const auto model = io::load_model(ckpt);
  const auto report =
      eval::evaluate_testset(model, phantom::read_manifest(a.data), *extractor, opts);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  std::ofstream out(a.out);
  if (!out) throw IoError("cannot write " + a.out.string());
  out << report.to_json() << '\n';
  std::cout << "phv_1 " << report.phv[0] << "  phv_2 " << report.phv[1] << "  phv_3 " << report.phv[2]
            << "  pairs " << report.n_pairs << '\n';
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-constrained OCT <-> H&E translation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-phantoms", "Render a synthetic phantom dataset");
  g->add_option("--n-oct", gen.n_oct, "Number of OCT samples")->check(CLI::NonNegativeNumber);
  g->add_option("--n-hist", gen.n_hist, "Number of histology samples")->check(CLI::NonNegativeNumber);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Root seed");
  g->add_option("--height", gen.height, "Image height")->check(CLI::PositiveNumber);
  g->add_option("--width", gen.width, "Image width")->check(CLI::PositiveNumber);
  g->add_option("--threads", gen.threads, "Worker threads (0 = all cores)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train on a phantom manifest");
  t->add_option("--config", tr.config, "key = value config file")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Manifest (manifest.jsonl)")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Run directory (overrides out_dir)");
  t->add_flag("--resume", tr.resume, "Continue from the newest checkpoint in the run directory");
  t->add_option("--seed", tr.seed, "Override the config seed");
  t->add_option("--epochs", tr.epochs, "Override the config epoch count");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Translate images with a trained checkpoint");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint or run directory")->required();
  i->add_option("--input", inf.inputs, "PNG files or directories")->required();
  i->add_option("--direction", inf.direction, "O2H or H2O");
  i->add_option("--out", inf.out, "Output directory")->required();
  i->add_flag("--no-montage", inf.no_montage, "Skip input|output montages");
  i->add_flag("--pad-to-multiple", inf.pad, "Reflect-pad inputs to the generator stride");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "PHV scores of virtual vs real histology");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint or run directory")->required();
  e->add_option("--data", ev.data, "Test manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--threshold", ev.threshold, "PHV threshold T");
  e->add_option("--out", ev.out, "Report JSON path");
  e->add_option("--pairing", ev.pairing, "all-pairs or best-match");
  e->add_option("--extractor", ev.extractor, "auto, fallback or resnet");
  e->add_option("--extractor-path", ev.extractor_path, "Directory with resnet.json/resnet.bin");
  e->add_option("--seed", ev.seed, "Fallback extractor seed");
  e->add_option("--threads", ev.threads, "Worker threads (0 = all cores)");

  std::string csv;
  fs::path svg;
  auto* p = app.add_subcommand("plot-losses", "Plot per-epoch loss curves");
  p->add_option("--csv", csv, "loss_log.csv")->required();
  p->add_option("--out", svg, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << one_line(ex.what()) << '\n';
    return ex.get_exit_code() != 0 ? ex.get_exit_code() : 2;
  }

  try {
    if (*g) return gen_phantoms(gen);
    if (*t) return run_train(tr);
    if (*i) return run_infer(inf);
    if (*e) return run_evaluate(ev);
    if (*p) {
      std::cout << "plot-losses csv=" << csv << " out=" << svg.string() << "\nseed = none\n";
      plot::plot_losses(csv, svg);
      std::cout << "wrote " << svg.string() << '\n';
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << one_line(ex.what()) << '\n';
    return 1;
  }
  return 1;
}
