#pragma once

// Finite-difference checks of every layer type and of the tiny end-to-end
// model, shared by the gradcheck command and the test suites.

#include <string>
#include <vector>

#include "scribe/model.hpp"
#include "scribe/optim.hpp"

namespace scribe {

struct NamedReport {
  std::string name;
  GradcheckReport report;
};

namespace detail {

inline TensorPtr random_input(Shape shape, Rng& rng) {
  auto t = make_tensor(std::move(shape));
  for (auto& v : t->data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

inline void randomize_biases(ParameterSet& set, Rng& rng) {
  for (auto& p : set.all())
    if (p.name.ends_with(".b")) init_uniform(*p.value, 1, rng);
}

}  // namespace detail

inline std::vector<NamedReport> layer_gradchecks(std::uint64_t seed = 1) {
  std::vector<NamedReport> out;
  Rng rng(seed);
  {
    auto x = detail::random_input({3, 4}, rng), w = detail::random_input({4, 5}, rng),
         b = detail::random_input({5}, rng);
    out.push_back({"affine", gradcheck({{"input", x}, {"weight", w}, {"bias", b}}, [&](Tape* t) {
                     return random_projection(t, affine(t, x, w, b), 1);
                   })});
  }
  for (auto fn : {Elementwise::kTanh, Elementwise::kSigmoid, Elementwise::kExp, Elementwise::kLog}) {
    auto x = detail::random_input({6}, rng);
    if (fn == Elementwise::kLog)
      for (auto& v : x->data()) v = std::abs(v) + 0.5;
    out.push_back({std::string(to_string(fn)), gradcheck({{"input", x}}, [&](Tape* t) {
                     return random_projection(t, elementwise(t, x, fn), 2);
                   })});
  }
  {
    auto x = detail::random_input({4, 3}, rng);
    out.push_back({"softmax", gradcheck({{"input", x}}, [&](Tape* t) {
                     return random_projection(t, softmax_along_axis(t, x, 0), 3);
                   })});
  }
  {
    ParameterSet set;
    auto p = LstmParams::create(set, "lstm", 2, 3, rng);
    detail::randomize_biases(set, rng);
    auto x = detail::random_input({2}, rng), h = detail::random_input({3}, rng),
         c = detail::random_input({3}, rng);
    auto targets = targets_of(set);
    targets.insert(targets.end(), {{"x", x}, {"h_prev", h}, {"c_prev", c}});
    out.push_back({"lstm_step", gradcheck(targets, [&](Tape* t) {
                     auto s = lstm_step(t, x, h, c, p);
                     return random_projection(t, concat_last_axis(t, s.h, s.c), 4);
                   })});
  }
  {
    ParameterSet set;
    auto p = BlstmParams::create(set, "blstm", 2, 3, rng);
    detail::randomize_biases(set, rng);
    auto seq = detail::random_input({4, 2}, rng);
    auto targets = targets_of(set);
    targets.push_back({"seq", seq});
    out.push_back({"blstm", gradcheck(targets, [&](Tape* t) {
                     return random_projection(t, blstm(t, seq, p), 5);
                   })});
  }
  {
    ParameterSet set;
    auto block = create_mdlstm_block(set, "mdlstm", 2, 3, rng);
    detail::randomize_biases(set, rng);
    auto x = detail::random_input({3, 4, 2}, rng);
    auto targets = targets_of(set);
    targets.push_back({"input", x});
    out.push_back({"mdlstm", gradcheck(targets, [&](Tape* t) {
                     auto maps = mdlstm_block(t, x, block);
                     return random_projection(t, add_all(t, {maps[0], maps[1], maps[2], maps[3]}), 6);
                   })});
  }
  {
    ParameterSet set;
    auto p = ConvParams::create(set, "conv", {2, 4}, 2, 3, 4, rng);
    detail::randomize_biases(set, rng);
    std::vector<TensorPtr> maps;
    auto targets = targets_of(set);
    for (int d = 0; d < 4; ++d) {
      maps.push_back(detail::random_input({5, 3, 2}, rng));
      targets.push_back({"map" + std::to_string(d), maps.back()});
    }
    out.push_back({"conv", gradcheck(targets, [&](Tape* t) {
                     return random_projection(t, conv_nonoverlap(t, maps, p), 7);
                   })});
  }
  {
    ParameterSet set;
    auto p = AttentionParams::create(set, 2, 3, rng);
    detail::randomize_biases(set, rng);
    auto a = detail::random_input({6, 6, 2}, rng);
    auto targets = targets_of(set);
    targets.push_back({"features", a});
    GradcheckOptions opt;
    opt.max_entries = 64;
    out.push_back({"iterate_collapse", gradcheck(targets, [&](Tape* t) {
                     return random_projection(t, iterate_collapse(t, a, 2, p).sequence, 8);
                   }, opt)});
  }
  {
    auto logits = detail::random_input({6, 4}, rng);
    const LabelSeq target{0, 2, 2};
    out.push_back({"ctc", gradcheck({{"logits", logits}}, [&](Tape* t) {
                     return ctc_loss_tensor(t, logits, target);
                   })});
  }
  return out;
}

/// Tiny model on an 8 x 16 image with 2 attention steps and a CTC loss.
inline NamedReport model_gradcheck(std::uint64_t seed = 1) {
  Model model(tiny_config(), seed);
  Rng rng(derive_seed(seed, 1));
  detail::randomize_biases(model.parameters(), rng);
  ImagePlane image(8, 16);
  for (auto& v : image.tensor()->data()) v = rng.uniform(-1.0, 1.0);
  const auto target = model.alphabet().encode("1 20");
  return {"model", gradcheck(targets_of(model.parameters()), [&](Tape* t) {
            auto out = model.forward(t, image, CollapseMode::kAttention);
            return ctc_loss_tensor(t, out.logits, target);
          })};
}

}  // namespace scribe
