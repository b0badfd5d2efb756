#pragma once

// Mini-batch CTC training with RMSProp and the staged curriculum (single
// lines with the plain collapse, then few-line crops and full paragraphs
// with the attention collapse).

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "scribe/data.hpp"
#include "scribe/metrics.hpp"
#include "scribe/model.hpp"
#include "scribe/optim.hpp"

namespace scribe {

enum class CtcTarget { kParagraph, kPerLine };

inline std::string to_string(CtcTarget t) {
  return t == CtcTarget::kParagraph ? "paragraph" : "line";
}

/// A sample ready for the network: normalized pixels and encoded targets.
struct Example {
  ImagePlane image;
  std::string reference;
  LabelSeq target;
  std::vector<LabelSeq> line_targets;
};

inline std::vector<Example> prepare_examples(const Model& model,
                                             const std::vector<ParagraphSample>& samples) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Example e;
    e.image = normalize(s.image);
    e.reference = s.transcript(model.config().line_separator);
    e.target = model.paragraph_target(s.lines);
    for (const auto& l : s.lines) e.line_targets.push_back(model.alphabet().encode(l));
    out.push_back(std::move(e));
  }
  return out;
}

/// Loss of one example under `tape`; gradients are scaled by `scale` on
/// backward. Per-line targets pair step t's frames with line t (extra steps
/// get an empty target).
inline double example_loss(Tape* tape, const ModelOutput& out, const Example& ex,
                           CtcTarget target, double scale) {
  if (target == CtcTarget::kParagraph || out.steps == 1) {
    return ctc_loss_node(tape, out.logits, ex.target, scale);
  }
  if (ex.line_targets.size() > out.steps) {
    throw InfeasibleError(detail::concat("per-line CTC: ", ex.line_targets.size(),
                                         " lines for ", out.steps, " collapse steps"));
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < out.steps; ++t) {
    auto seg = slice_first_axis(tape, out.logits, t * out.frames_per_step, out.frames_per_step);
    const LabelSeq empty;
    loss += ctc_loss_node(tape, seg, t < ex.line_targets.size() ? ex.line_targets[t] : empty, scale);
  }
  return loss;
}

struct EpochSummary {
  double mean_loss = 0.0;
  double train_cer = 0.0;
  double val_cer = std::numeric_limits<double>::quiet_NaN();
  std::size_t samples = 0;
  std::size_t skipped = 0;
  double seconds = 0.0;
};

inline double evaluate_cer(const Model& model, const std::vector<Example>& examples,
                           CollapseMode mode) {
  ErrorTally tally;
  for (const auto& ex : examples) {
    auto out = model.forward(nullptr, ex.image, mode);
    tally.add(ex.reference, model.decode_text(*out.logits));
  }
  return tally.cer();
}

/// One pass over `train` in a seed-determined order. Each mini-batch sums
/// per-sample gradients scaled by 1/batch in sample order, then takes one
/// RMSProp step. Training CER is measured on the pre-update outputs.
inline EpochSummary train_epoch(Model& model, const std::vector<Example>& train,
                                const std::vector<Example>& val, const OptimizerConfig& opt,
                                CollapseMode mode, CtcTarget target, std::uint64_t seed) {
  opt.validate();
  if (train.empty()) throw ConfigError("train_epoch: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  const auto order = rng.permutation(train.size());
  auto& params = model.parameters();
  params.zero_grad();
  EpochSummary summary;
  ErrorTally tally;
  double loss_sum = 0.0;
  for (std::size_t first = 0; first < order.size(); first += opt.batch_size) {
    const std::size_t last = std::min(first + opt.batch_size, order.size());
    const double scale = 1.0 / static_cast<double>(last - first);
    for (std::size_t k = first; k < last; ++k) {
      const Example& ex = train[order[k]];
      Tape tape;
      auto out = model.forward(&tape, ex.image, mode);
      double loss = 0.0;
      try {
        loss = example_loss(&tape, out, ex, target, scale);
      } catch (const InfeasibleError&) {
        ++summary.skipped;
        continue;
      }
      tape.backward();
      loss_sum += loss;
      ++summary.samples;
      tally.add(ex.reference, model.decode_text(*out.logits));
    }
    rmsprop_step(params, opt);
  }
  summary.mean_loss = summary.samples ? loss_sum / static_cast<double>(summary.samples) : 0.0;
  summary.train_cer = tally.cer();
  if (!val.empty()) summary.val_cer = evaluate_cer(model, val, mode);
  summary.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

// ---------------------------------------------------------------------------
// curriculum

struct CurriculumPhase {
  std::string name;
  /// Lines per training crop; 0 keeps whole paragraphs.
  std::size_t max_lines = 0;
  std::size_t epochs = 1;
  CollapseMode collapse = CollapseMode::kAttention;
  /// Stop the phase early once training CER is at or below this (< 0: off).
  double target_cer = -1.0;

  bool operator==(const CurriculumPhase&) const = default;

  void validate() const {
    if (name.empty()) throw ConfigError("curriculum phase without a name");
    if (epochs == 0) throw ConfigError("phase " + name + ": epochs must be >= 1");
  }
};

inline std::vector<CurriculumPhase> default_curriculum() {
  return {{"lines", 1, 20, CollapseMode::kStandard, -1.0},
          {"few-lines", 2, 10, CollapseMode::kAttention, -1.0},
          {"paragraphs", 0, 40, CollapseMode::kAttention, -1.0}};
}

struct EpochLogRow {
  std::size_t epoch = 0;
  std::string phase;
  EpochSummary summary;

  /// epoch, phase, mean loss, train CER, val CER, wall seconds.
  std::string str() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << epoch << "\t" << phase << "\t" << summary.mean_loss << "\t";
    os.precision(2);
    os << summary.train_cer << "\t";
    if (std::isnan(summary.val_cer)) os << "-";
    else os << summary.val_cer;
    os.precision(1);
    os << "\t" << summary.seconds;
    return os.str();
  }
};

struct TrainSettings {
  OptimizerConfig optimizer;
  CtcTarget ctc = CtcTarget::kParagraph;
  std::uint64_t seed = 1;
};

struct CurriculumHooks {
  std::function<void(const EpochLogRow&)> on_epoch;
  std::function<void(std::size_t, const CurriculumPhase&)> on_phase_end;
  std::function<void(const std::string&)> note;
};

inline std::vector<Example> phase_examples(const Model& model,
                                           const std::vector<ParagraphSample>& samples,
                                           std::size_t max_lines) {
  std::vector<ParagraphSample> crops;
  for (const auto& s : samples)
    for (auto& w : line_windows(s, max_lines)) crops.push_back(std::move(w));
  return prepare_examples(model, crops);
}

/// Trains phases [start_phase, end) in order. Each phase resets the RMSProp
/// state; the first attention phase draws fresh attention weights. Encoder
/// and decoder weights carry over between phases.
inline void run_curriculum(Model& model, const std::vector<CurriculumPhase>& phases,
                           const std::vector<ParagraphSample>& train,
                           const std::vector<ParagraphSample>& val,
                           const TrainSettings& settings, const CurriculumHooks& hooks = {},
                           std::size_t start_phase = 0) {
  auto lines_key = [](std::size_t m) {
    return m == 0 ? std::numeric_limits<std::size_t>::max() : m;
  };
  for (std::size_t k = 0; k < phases.size(); ++k) {
    phases[k].validate();
    if (k && lines_key(phases[k].max_lines) < lines_key(phases[k - 1].max_lines)) {
      throw ConfigError("curriculum phases must be ordered by max_lines");
    }
  }
  std::size_t first_attention = phases.size();
  for (std::size_t k = 0; k < phases.size(); ++k)
    if (phases[k].collapse == CollapseMode::kAttention) {
      first_attention = k;
      break;
    }
  if (hooks.note && !phases.empty() && phases.front().collapse == CollapseMode::kAttention &&
      start_phase == 0) {
    hooks.note("cold start: no plain-collapse pretraining phase");
  }
  for (std::size_t k = start_phase; k < phases.size(); ++k) {
    const auto& phase = phases[k];
    if (k == first_attention) model.reinitialize_attention(derive_seed(settings.seed, 7000 + k));
    reset_optimizer_state(model.parameters());
    const auto train_ex = phase_examples(model, train, phase.max_lines);
    const auto val_ex = phase_examples(model, val, phase.max_lines);
    if (hooks.note) {
      hooks.note(detail::concat("phase ", phase.name, ": ", train_ex.size(), " training and ",
                                val_ex.size(), " validation crops, collapse ",
                                to_string(phase.collapse)));
    }
    for (std::size_t e = 0; e < phase.epochs; ++e) {
      const auto seed = derive_seed(settings.seed, (k + 1) * 1000003ULL + e);
      EpochLogRow row{e + 1, phase.name,
                      train_epoch(model, train_ex, val_ex, settings.optimizer, phase.collapse,
                                  settings.ctc, seed)};
      if (hooks.on_epoch) hooks.on_epoch(row);
      if (phase.target_cer >= 0.0 && row.summary.train_cer <= phase.target_cer) break;
    }
    if (hooks.on_phase_end) hooks.on_phase_end(k, phase);
  }
}

}  // namespace scribe
