#pragma once

// The full recognizer: encoder, collapse (plain or attention), decoder and
// output layer, with all weights in one ParameterSet.

#include <optional>
#include <string>
#include <vector>

#include "scribe/alphabet.hpp"
#include "scribe/collapse.hpp"
#include "scribe/ctc.hpp"
#include "scribe/layers.hpp"
#include "scribe/parameter.hpp"

namespace scribe {

enum class CollapseMode { kStandard, kAttention };
enum class DecoderKind { kSoftmax, kBlstm };

inline std::string to_string(CollapseMode m) {
  return m == CollapseMode::kStandard ? "standard" : "attention";
}
inline std::string to_string(DecoderKind d) {
  return d == DecoderKind::kSoftmax ? "softmax" : "blstm";
}

struct ModelConfig {
  std::string alphabet = "0123456789 ";
  EncoderConfig encoder;
  std::size_t attention_units = 16;
  /// Number of collapse iterations T (no stop token).
  std::size_t attention_steps = 3;
  DecoderKind decoder = DecoderKind::kBlstm;
  std::size_t decoder_units = 256;
  /// Inserted between line transcripts in paragraph-level targets.
  std::string line_separator = " ";

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    Alphabet a(alphabet);
    encoder.validate();
    if (attention_units == 0) throw ConfigError("attention: units must be >= 1");
    if (attention_steps == 0) throw ConfigError("attention: steps must be >= 1");
    if (decoder == DecoderKind::kBlstm && decoder_units == 0) {
      throw ConfigError("decoder: units must be >= 1");
    }
    if (decoder == DecoderKind::kSoftmax && encoder.output_dim != 0 &&
        encoder.output_dim != a.size() + 1) {
      throw ConfigError("decoder: softmax decoding needs encoder output_dim == labels + 1");
    }
    if (!line_separator.empty() && !a.contains(line_separator)) {
      throw ConfigError("line separator '" + line_separator + "' is not in the alphabet");
    }
  }

  std::size_t feature_depth() const {
    return encoder.output_dim ? encoder.output_dim : Alphabet(alphabet).size() + 1;
  }
};

/// Smallest useful graph, for gradient checks on 8 x 16 images.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.alphabet = "012 ";
  c.encoder.mdlstm_units = {2, 3, 3};
  c.encoder.conv_filters = {3, 3};
  c.encoder.conv_kernels = {{2, 2}, {1, 1}};
  c.attention_units = 3;
  c.attention_steps = 2;
  c.decoder_units = 3;
  return c;
}

/// Reduced widths for single-core training on the synthetic digit task:
/// 4x vertical and 4x horizontal downsampling.
inline ModelConfig desk_config() {
  ModelConfig c;
  c.encoder.mdlstm_units = {4, 16, 32};
  c.encoder.conv_filters = {12, 32};
  c.encoder.conv_kernels = {{2, 2}, {1, 1}};
  c.attention_units = 16;
  c.attention_steps = 3;
  c.decoder_units = 64;
  return c;
}

struct ModelOutput {
  TensorPtr features;  // encoder map H' x W' x D
  TensorPtr logits;    // frames x (K+1)
  std::size_t steps = 1;
  std::size_t frames_per_step = 0;
  std::optional<AttentionMap> attention;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), alphabet_(cfg_.alphabet) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t depth = cfg_.feature_depth();
    encoder_ = EncoderParams::create(params_, cfg_.encoder, 1, depth, rng);
    attention_ = AttentionParams::create(params_, depth, cfg_.attention_units, rng);
    if (cfg_.decoder == DecoderKind::kBlstm) {
      blstm_ = BlstmParams::create(params_, "decoder.blstm", depth, cfg_.decoder_units, rng);
      out_weight_ = params_.add("decoder.out.W", {2 * cfg_.decoder_units, label_count()});
      out_bias_ = params_.add("decoder.out.b", {label_count()});
      init_uniform(*out_weight_, 2 * cfg_.decoder_units, rng);
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Alphabet& alphabet() const { return alphabet_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const AttentionParams& attention() const { return attention_; }
  std::size_t label_count() const { return alphabet_.size() + 1; }

  /// Fresh attention weights; every other parameter is untouched.
  void reinitialize_attention(std::uint64_t seed) {
    Rng rng(seed);
    attention_.reinitialize(rng);
  }

  /// `image` must already be normalized.
  ModelOutput forward(Tape* tape, const ImagePlane& image, CollapseMode mode) const {
    ModelOutput out;
    out.features = encode(tape, image, cfg_.encoder, encoder_);
    out.frames_per_step = out.features->dim(1);
    TensorPtr sequence;
    if (mode == CollapseMode::kStandard) {
      sequence = standard_collapse(tape, out.features);
    } else {
      auto collapsed = iterate_collapse(tape, out.features, cfg_.attention_steps, attention_);
      sequence = collapsed.sequence;
      out.steps = cfg_.attention_steps;
      out.attention = std::move(collapsed.map);
    }
    if (cfg_.decoder == DecoderKind::kSoftmax) {
      out.logits = sequence;
    } else {
      out.logits = affine(tape, blstm(tape, sequence, blstm_), out_weight_, out_bias_);
    }
    return out;
  }

  /// Paragraph-level target: line transcripts joined by the separator.
  LabelSeq paragraph_target(const std::vector<std::string>& lines) const {
    std::string text;
    for (std::size_t k = 0; k < lines.size(); ++k) {
      if (k) text += cfg_.line_separator;
      text += lines[k];
    }
    return alphabet_.encode(text);
  }

  std::string decode_text(const Tensor& logits) const {
    return alphabet_.decode(best_path_decode(logits));
  }

 private:
  ModelConfig cfg_;
  Alphabet alphabet_;
  ParameterSet params_;
  EncoderParams encoder_;
  AttentionParams attention_;
  BlstmParams blstm_;
  TensorPtr out_weight_;
  TensorPtr out_bias_;
};

}  // namespace scribe
