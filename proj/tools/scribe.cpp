// scribe: generate data, train, evaluate, transcribe and check gradients.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "scribe/checks.hpp"
#include "scribe/config.hpp"
#include "scribe/eval.hpp"

namespace fs = std::filesystem;
using namespace scribe;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

// "a" or "a:b"
IntRange parse_range(const std::string& text) {
  const auto colon = text.find(':', 1);
  try {
    if (colon == std::string::npos) {
      const int v = std::stoi(text);
      return {v, v};
    }
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("'" + text + "' is not a range (use N or LO:HI)");
  }
}

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  return cfg;
}

fs::path under_out(const Globals& g, const fs::path& p) {
  if (p.is_absolute() || g.out.empty()) return p;
  return fs::path(g.out) / p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// --- gen ---------------------------------------------------------------

struct GenArgs {
  std::size_t count = 100;
  std::string lines = "3";
  std::string chars = "4:8";
  std::string jitter = "0:1";
  std::string gap = "2:4";
  std::string touching_gap = "-1:0";
  double touching = 0.0;
  int scale = 2;
  int margin = 2;
  double noise = 0.0;
  std::string alphabet = "0123456789 ";
  std::uint64_t offset = 0;
};

int cmd_gen(const Globals& g, const GenArgs& a) {
  GenSpec spec;
  spec.alphabet = a.alphabet;
  spec.lines = parse_range(a.lines);
  spec.chars = parse_range(a.chars);
  spec.jitter = parse_range(a.jitter);
  spec.line_gap = parse_range(a.gap);
  spec.scale = a.scale;
  spec.margin = a.margin;
  spec.noise = a.noise;
  spec.seed = g.seed.value_or(1);
  const fs::path dir = g.out.empty() ? fs::path("data") : fs::path(g.out);
  const auto samples = generate_corpus(spec, a.offset, a.count, a.touching, parse_range(a.touching_gap));
  const auto n_touching = std::count_if(samples.begin(), samples.end(), has_touching_lines);
  save_dataset(dir, samples);
  std::cout << "wrote " << samples.size() << " samples (" << n_touching
            << " with touching lines) to " << (dir / "manifest.tsv").string() << "\n";
  return 0;
}

// --- train -------------------------------------------------------------

struct TrainArgs {
  std::string resume;
  std::size_t start_phase = 1;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const ExperimentConfig cfg = resolve_config(g);
  if (cfg.data.train.empty()) throw ConfigError("config: [data] train manifest is required");
  const Alphabet alphabet(cfg.model.alphabet);
  const auto train = load_dataset(cfg.data.train, alphabet);
  const auto val = cfg.data.validation.empty() ? std::vector<ParagraphSample>{}
                                               : load_dataset(cfg.data.validation, alphabet);
  if (train.empty()) throw ConfigError("training manifest " + cfg.data.train + " is empty");
  if (a.start_phase < 1 || a.start_phase > cfg.phases.size()) {
    throw ConfigError(detail::concat("--start-phase must be in [1, ", cfg.phases.size(), "]"));
  }

  const fs::path out(cfg.out);
  ensure_dir(out);
  save_config(out / "config.cfg", cfg);
  Model model(cfg.model, cfg.seed);
  if (!a.resume.empty()) load_parameters(a.resume, model.parameters());
  std::ofstream log(out / "train.log", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + (out / "train.log").string());

  TrainSettings settings;
  settings.optimizer = cfg.optimizer;
  settings.ctc = cfg.ctc;
  settings.seed = cfg.seed;
  CurriculumHooks hooks;
  hooks.on_epoch = [&](const EpochLogRow& row) {
    log << row.str() << "\n" << std::flush;
    std::cout << row.str() << (row.summary.skipped ? "\tskipped=" + std::to_string(row.summary.skipped) : "")
              << std::endl;
  };
  hooks.note = [&](const std::string& note) { std::cout << "# " << note << std::endl; };
  hooks.on_phase_end = [&](std::size_t k, const CurriculumPhase&) {
    const auto path = out / ("phase" + std::to_string(k + 1) + ".ckpt");
    save_checkpoint(path, model, cfg);
    std::cout << "# checkpoint " << path.string() << std::endl;
  };
  run_curriculum(model, cfg.phases, train, val, settings, hooks, a.start_phase - 1);
  save_checkpoint(out / "final.ckpt", model, cfg);
  std::cout << "# checkpoint " << (out / "final.ckpt").string() << std::endl;
  return 0;
}

// --- eval / transcribe ---------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string baseline;
  std::string collapse = "attention";
  int min_height = 3;
};

CollapseMode parse_collapse(const std::string& s) {
  if (s == "attention") return CollapseMode::kAttention;
  if (s == "standard") return CollapseMode::kStandard;
  throw ConfigError("--collapse must be attention or standard");
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  auto [cfg, model] = load_checkpoint(a.checkpoint);
  const auto samples = load_dataset(a.manifest, model->alphabet());
  EvalPipeline pipeline = EvalPipeline::kModel;
  if (a.baseline == "projection") {
    pipeline = EvalPipeline::kProjectionBaseline;
  } else if (!a.baseline.empty()) {
    throw ConfigError("--baseline accepts only 'projection'");
  }
  ProjectionConfig proj;
  proj.min_height = a.min_height;
  const auto report = evaluate(*model, samples, parse_collapse(a.collapse), pipeline, proj);
  const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
  ensure_dir(dir);
  std::ofstream tsv(dir / "eval.tsv", std::ios::trunc);
  report.write_tsv(tsv);
  std::cout << report.summary() << "\n";
  return 0;
}

struct TranscribeArgs {
  std::string checkpoint;
  std::string image;
  std::string attention;
  std::string collapse = "attention";
};

int cmd_transcribe(const Globals& g, const TranscribeArgs& a) {
  auto [cfg, model] = load_checkpoint(a.checkpoint);
  const auto image = read_pgm(a.image);
  const auto t = transcribe(*model, image, parse_collapse(a.collapse));
  std::cout << t.text << "\n";
  if (!a.attention.empty()) {
    if (!t.attention) throw ConfigError("--attention needs the attention collapse");
    const auto files = export_attention(image, *t.attention, model->config().encoder,
                                        under_out(g, a.attention), fs::path(a.image).stem().string());
    for (const auto& f : files) std::cerr << "wrote " << f.string() << "\n";
  }
  return 0;
}

// --- gradcheck -----------------------------------------------------------

int cmd_gradcheck(const Globals& g, const std::string& scope, double threshold) {
  std::vector<NamedReport> reports;
  const std::uint64_t seed = g.seed.value_or(1);
  if (scope == "layer") {
    reports = layer_gradchecks(seed);
  } else if (scope == "model") {
    reports.push_back(model_gradcheck(seed));
  } else {
    throw ConfigError("--scope must be layer or model");
  }
  bool ok = true;
  for (const auto& r : reports) {
    const bool pass = r.report.passed(threshold);
    ok = ok && pass;
    std::cout << (pass ? "ok    " : "FAIL  ") << r.name << "  max rel err " << r.report.max_error()
              << "\n";
    if (!pass) std::cout << r.report.str();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paragraph transcription with MDLSTM encoders and attention collapse"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--config", g.config, "experiment config file");
  app.add_option("--out", g.out, "output directory");

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic paragraph corpus");
  gen->add_option("--count", gen_args.count, "number of samples")->capture_default_str();
  gen->add_option("--lines", gen_args.lines, "lines per paragraph, N or LO:HI")->capture_default_str();
  gen->add_option("--chars", gen_args.chars, "characters per line, N or LO:HI")->capture_default_str();
  gen->add_option("--jitter", gen_args.jitter, "vertical glyph offset range (font px)")->capture_default_str();
  gen->add_option("--gap", gen_args.gap, "line gap range (font px)")->capture_default_str();
  gen->add_option("--touching", gen_args.touching, "fraction of samples drawn with --touching-gap")
      ->capture_default_str();
  gen->add_option("--touching-gap", gen_args.touching_gap, "line gap range for those samples")
      ->capture_default_str();
  gen->add_option("--scale", gen_args.scale, "pixel multiplier")->capture_default_str();
  gen->add_option("--margin", gen_args.margin, "page margin (font px)")->capture_default_str();
  gen->add_option("--noise", gen_args.noise, "additive uniform noise amplitude")->capture_default_str();
  gen->add_option("--alphabet", gen_args.alphabet, "symbols to draw from")->capture_default_str();
  gen->add_option("--offset", gen_args.offset, "index of the first sample")->capture_default_str();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run the curriculum from a config");
  train->add_option("--resume", train_args.resume, "parameter checkpoint to start from");
  train->add_option("--start-phase", train_args.start_phase, "1-based phase to start at")
      ->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "transcribe a manifest and report CER/WER");
  eval->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval->add_option("--manifest", eval_args.manifest)->required();
  eval->add_option("--baseline", eval_args.baseline, "'projection' for the segmentation baseline");
  eval->add_option("--collapse", eval_args.collapse, "attention or standard")->capture_default_str();
  eval->add_option("--min-height", eval_args.min_height, "projection: minimum line height (px)")
      ->capture_default_str();

  TranscribeArgs tr_args;
  auto* tr = app.add_subcommand("transcribe", "transcribe one PGM image");
  tr->add_option("--checkpoint", tr_args.checkpoint)->required();
  tr->add_option("--image", tr_args.image)->required();
  tr->add_option("--attention", tr_args.attention, "write attention maps to this directory");
  tr->add_option("--collapse", tr_args.collapse, "attention or standard")->capture_default_str();

  std::string scope = "layer";
  double threshold = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--scope", scope, "layer or model")->capture_default_str();
  gc->add_option("--threshold", threshold, "maximum relative error")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(g, gen_args);
    if (*train) return cmd_train(g, train_args);
    if (*eval) return cmd_eval(g, eval_args);
    if (*tr) return cmd_transcribe(g, tr_args);
    if (*gc) return cmd_gradcheck(g, scope, threshold);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
