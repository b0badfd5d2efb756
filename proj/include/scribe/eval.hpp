#pragma once

// Transcription, CER/WER reports, the explicit-segmentation baseline and
// attention-map export.

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scribe/data.hpp"
#include "scribe/metrics.hpp"
#include "scribe/model.hpp"

namespace scribe {

struct Transcription {
  std::string text;
  LabelSeq labels;
  std::optional<AttentionMap> attention;
};

inline void check_receptive_field(const ImagePlane& image, const EncoderConfig& cfg) {
  if (image.empty() || image.height() < cfg.vertical_factor() ||
      image.width() < cfg.horizontal_factor()) {
    throw DimensionError(detail::concat("image ", image.height(), "x", image.width(),
                                        " is smaller than one encoder cell (",
                                        cfg.vertical_factor(), "x", cfg.horizontal_factor(),
                                        ")"));
  }
}

/// normalize -> encode -> collapse -> decode -> best path -> text.
inline Transcription transcribe(const Model& model, const ImagePlane& image,
                                CollapseMode mode = CollapseMode::kAttention) {
  check_receptive_field(image, model.config().encoder);
  auto out = model.forward(nullptr, normalize(image), mode);
  Transcription t;
  t.labels = best_path_decode(*out.logits);
  t.text = model.alphabet().decode(t.labels);
  t.attention = std::move(out.attention);
  return t;
}

/// Projection segmentation, one-row margin crops, per-line transcription with
/// the standard collapse, lines joined top to bottom with spaces.
inline std::string baseline_transcribe(const Model& line_model, const ImagePlane& image,
                                       const ProjectionConfig& proj = {}) {
  const auto boxes = projection_segment(image, proj);
  std::string text;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const auto crop = crop_rows(image, boxes[k].top - 1, boxes[k].bottom + 1);
    std::string line;
    if (crop.height() >= line_model.config().encoder.vertical_factor() &&
        crop.width() >= line_model.config().encoder.horizontal_factor()) {
      line = transcribe(line_model, crop, CollapseMode::kStandard).text;
    }
    if (k) text += " ";
    text += line;
  }
  return text;
}

struct SampleEval {
  std::string reference;
  std::string hypothesis;
  std::size_t char_edits = 0;
  std::size_t ref_chars = 0;
  std::size_t word_edits = 0;
  std::size_t ref_words = 0;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  std::size_t skipped = 0;
  ErrorTally tally;

  void add(std::string reference, std::string hypothesis) {
    SampleEval s;
    s.char_edits = char_edits(reference, hypothesis);
    s.ref_chars = split_utf8(reference).size();
    s.word_edits = word_edits(reference, hypothesis);
    s.ref_words = split_words(reference).size();
    tally.add(reference, hypothesis);
    s.reference = std::move(reference);
    s.hypothesis = std::move(hypothesis);
    samples.push_back(std::move(s));
  }

  double cer() const { return tally.cer(); }
  double wer() const { return tally.wer(); }

  std::string summary() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "samples=" << samples.size() << "\tskipped=" << skipped << "\tCER%=" << cer()
       << "\tWER%=" << wer();
    return os.str();
  }

  /// Tab-separated rows (index, reference, hypothesis, char edits, reference
  /// chars, word edits, reference words) followed by the summary line.
  void write_tsv(std::ostream& os) const {
    os << "index\treference\thypothesis\tchar_edits\tref_chars\tword_edits\tref_words\n";
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto& s = samples[k];
      os << k << "\t" << s.reference << "\t" << s.hypothesis << "\t" << s.char_edits << "\t"
         << s.ref_chars << "\t" << s.word_edits << "\t" << s.ref_words << "\n";
    }
    os << "# " << summary() << "\n";
  }
};

enum class EvalPipeline { kModel, kProjectionBaseline };

/// References use single spaces between lines, like the baseline output.
inline EvalReport evaluate(const Model& model, const std::vector<ParagraphSample>& samples,
                           CollapseMode mode, EvalPipeline pipeline = EvalPipeline::kModel,
                           const ProjectionConfig& proj = {}) {
  EvalReport report;
  for (const auto& s : samples) {
    const std::string ref = s.transcript(model.config().line_separator);
    try {
      std::string hyp = pipeline == EvalPipeline::kModel
                            ? transcribe(model, s.image, mode).text
                            : baseline_transcribe(model, s.image, proj);
      report.add(ref, std::move(hyp));
    } catch (const DimensionError&) {
      ++report.skipped;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// attention diagnostics and export

/// Fraction of step t's weight lying in image rows [top, bottom], each
/// encoder row covering `rows_per_cell` image rows from the top edge.
inline double band_mass(const AttentionMap& map, std::size_t t, int top, int bottom,
                        std::size_t rows_per_cell) {
  double mass = 0.0;
  const double cell = static_cast<double>(rows_per_cell);
  for (std::size_t j = 0; j < map.height; ++j) {
    const double lo = static_cast<double>(j) * cell, hi = lo + cell;  // [lo, hi)
    const double overlap =
        std::max(0.0, std::min(hi, static_cast<double>(bottom) + 1.0) - std::max(lo, static_cast<double>(top)));
    if (overlap <= 0.0) continue;
    double row = 0.0;
    for (std::size_t i = 0; i < map.width; ++i) row += map.at(t, j, i);
    mass += row * overlap / cell;
  }
  return mass / static_cast<double>(map.width);
}

inline std::array<unsigned char, 3> step_hue(std::size_t t, std::size_t steps) {
  const double h = 6.0 * static_cast<double>(t) / static_cast<double>(std::max<std::size_t>(steps, 1));
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  auto byte = [](double v) { return static_cast<unsigned char>(std::lround(255.0 * v)); };
  return {byte(r), byte(g), byte(b)};
}

/// Writes `<stem>_step<t>.pgm` for every step (weights x 255, nearest-
/// neighbour upsampled to image size) and `<stem>_overlay.ppm`, which tints
/// each pixel with the hue of its strongest step.
inline std::vector<std::filesystem::path> export_attention(const ImagePlane& image,
                                                           const AttentionMap& map,
                                                           const EncoderConfig& cfg,
                                                           const std::filesystem::path& dir,
                                                           const std::string& stem = "attention") {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const std::size_t H = image.height(), W = image.width();
  const std::size_t vf = cfg.vertical_factor(), hf = cfg.horizontal_factor();
  auto weight = [&](std::size_t t, std::size_t y, std::size_t x) {
    const std::size_t j = std::min(y / vf, map.height - 1), i = std::min(x / hf, map.width - 1);
    return map.at(t, j, i);
  };
  std::vector<fs::path> written;
  std::vector<double> peak(map.steps, 0.0);
  for (std::size_t t = 0; t < map.steps; ++t) {
    ImagePlane plane(H, W, 1);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double w = weight(t, y, x);
        plane.at(y, x) = 255.0 * w;
        peak[t] = std::max(peak[t], w);
      }
    auto path = dir / (stem + "_step" + std::to_string(t + 1) + ".pgm");
    write_pgm(path, plane);
    written.push_back(path);
  }
  double background = 0.0;
  for (double v : image.tensor()->data()) background = std::max(background, v);
  if (background <= 0.0) background = 1.0;
  std::vector<std::array<unsigned char, 3>> rgb(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double gray = std::clamp(image.at(y, x) / background, 0.0, 1.0);
      std::size_t best = 0;
      double alpha = -1.0;
      for (std::size_t t = 0; t < map.steps; ++t) {
        const double a = peak[t] > 0.0 ? weight(t, y, x) / peak[t] : 0.0;
        if (a > alpha) {
          alpha = a;
          best = t;
        }
      }
      const auto hue = step_hue(best, map.steps);
      const double mix = 0.6 * std::clamp(alpha, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1.0 - mix) * gray * 255.0 + mix * hue[c] * (0.4 + 0.6 * gray);
        rgb[y * W + x][c] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  auto overlay = dir / (stem + "_overlay.ppm");
  write_ppm(overlay, H, W, rgb);
  written.push_back(overlay);
  return written;
}

}  // namespace scribe
