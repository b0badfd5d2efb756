#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "scribe/config.hpp"
#include "test_util.hpp"

using namespace scribe;

namespace {

ExperimentConfig custom_config() {
  ExperimentConfig c;
  c.seed = 42;
  c.out = "runs/with space";
  c.data = {"data/train/manifest.tsv", "data/val/manifest.tsv"};
  c.model = desk_config();
  c.model.alphabet = "0123 #\"\\";
  c.model.line_separator = " ";
  c.model.encoder.output_dim = 0;
  c.optimizer.learning_rate = 0.003;
  c.optimizer.decay = 0.95;
  c.optimizer.epsilon = 1e-7;
  c.optimizer.batch_size = 4;
  c.optimizer.grad_clip = 0.125;
  c.ctc = CtcTarget::kPerLine;
  c.phases = {{"warm", 1, 3, CollapseMode::kStandard, 5.5},
              {"all", 0, 7, CollapseMode::kAttention, -1.0}};
  return c;
}

std::string expect_config_error(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return {};
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c;
  EXPECT_EQ(parse_config_string(serialize_config(c)), c);
}

TEST(Config, CustomRoundTrip) {
  const auto c = custom_config();
  const auto text = serialize_config(c);
  const auto back = parse_config_string(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize_config(back), text);
}

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config_string(""), ExperimentConfig{});
  EXPECT_EQ(parse_config_string("# only a comment\n\n"), ExperimentConfig{});
}

TEST(Config, QuotedAlphabetKeepsTrailingSpace) {
  const auto c = parse_config_string("[model]\nalphabet = \"01 \"  # digits and a space\n"
                                     "line_separator = \" \"\n");
  EXPECT_EQ(c.model.alphabet, "01 ");
  EXPECT_EQ(c.model.line_separator, " ");
}

TEST(Config, ParsesListsAndKernels) {
  const auto c = parse_config_string(
      "[encoder]\nmdlstm_units = 1, 2,3\nconv_filters = 5,6\nconv_kernels = 3x2, 1x4\n");
  EXPECT_EQ(c.model.encoder.mdlstm_units, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(c.model.encoder.conv_filters, (std::vector<std::size_t>{5, 6}));
  ASSERT_EQ(c.model.encoder.conv_kernels.size(), 2u);
  EXPECT_EQ(c.model.encoder.conv_kernels[0].width, 3u);
  EXPECT_EQ(c.model.encoder.conv_kernels[0].height, 2u);
  EXPECT_EQ(c.model.encoder.conv_kernels[1].width, 1u);
  EXPECT_EQ(c.model.encoder.conv_kernels[1].height, 4u);
}

TEST(Config, PhasesReplaceDefaultCurriculum) {
  const auto c = parse_config_string("[phase]\nname = only\nepochs = 2\ncollapse = standard\n");
  ASSERT_EQ(c.phases.size(), 1u);
  EXPECT_EQ(c.phases[0].name, "only");
  EXPECT_EQ(c.phases[0].epochs, 2u);
  EXPECT_EQ(c.phases[0].collapse, CollapseMode::kStandard);
}

TEST(Config, UnknownKeyNamesLine) {
  const auto msg = expect_config_error("[optimizer]\nlearning_rate = 0.1\nlearnig_rate = 0.2\n");
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("learnig_rate"), std::string::npos) << msg;
}

TEST(Config, UnknownSectionNamesLine) {
  const auto msg = expect_config_error("\n[decoderz]\n");
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("decoderz"), std::string::npos) << msg;
}

TEST(Config, MalformedLines) {
  EXPECT_NE(expect_config_error("seed = 3\n").find("outside any section"), std::string::npos);
  EXPECT_NE(expect_config_error("[experiment]\nseed 3\n").find(":2:"), std::string::npos);
  EXPECT_NE(expect_config_error("[experiment\n").find("malformed"), std::string::npos);
  EXPECT_NE(expect_config_error("[experiment]\nseed = many\n").find("seed"), std::string::npos);
  EXPECT_NE(expect_config_error("[encoder]\nconv_kernels = 2by2\n").find("conv_kernels"),
            std::string::npos);
  EXPECT_NE(expect_config_error("[model]\ndecoder = lstm\n").find("decoder"), std::string::npos);
}

TEST(Config, ValidationErrorsCarryOrigin) {
  std::istringstream in("[attention]\nsteps = 0\n");
  try {
    parse_config(in, "exp.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("exp.cfg: ", 0), 0u) << e.what();
  }
}

TEST(Config, FileRoundTrip) {
  const auto dir = test::temp_dir("config_file");
  const auto c = custom_config();
  save_config(dir / "a.cfg", c);
  EXPECT_EQ(load_config(dir / "a.cfg"), c);
  EXPECT_THROW(load_config(dir / "missing.cfg"), IoError);
}

TEST(Config, CheckpointRebuildsModel) {
  const auto dir = test::temp_dir("config_ckpt");
  ExperimentConfig c;
  c.model = tiny_config();
  c.seed = 3;
  Model model(c.model, 99);  // weights differ from what seed 3 would draw
  save_checkpoint(dir / "m.ckpt", model, c);
  EXPECT_TRUE(std::filesystem::exists(config_sidecar(dir / "m.ckpt")));
  auto [cfg, loaded] = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(cfg, c);
  const auto& a = model.parameters().all();
  const auto& b = loaded->parameters().all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    const auto x = a[i].value->data(), y = b[i].value->data();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t j = 0; j < x.size(); ++j) ASSERT_EQ(x[j], y[j]) << a[i].name;
  }
  EXPECT_THROW(load_checkpoint(dir / "nothing.ckpt"), IoError);
}

TEST(Config, CheckpointConfigMismatchFails) {
  const auto dir = test::temp_dir("config_mismatch");
  ExperimentConfig c;
  c.model = tiny_config();
  Model model(c.model, 1);
  save_checkpoint(dir / "m.ckpt", model, c);
  auto other = c;
  other.model.decoder_units = 5;
  save_config(config_sidecar(dir / "m.ckpt"), other);
  EXPECT_ANY_THROW(load_checkpoint(dir / "m.ckpt"));
}

TEST(Config, ShippedConfigsParse) {
  const std::filesystem::path dir = SCRIBE_SOURCE_DIR "/configs";
  const auto desk = load_config(dir / "desk.cfg");
  EXPECT_EQ(desk.model, desk_config());
  EXPECT_EQ(desk.phases.size(), 3u);
  EXPECT_EQ(desk.optimizer.learning_rate, 0.003);
  const auto tiny = load_config(dir / "tiny.cfg");
  EXPECT_EQ(tiny.phases.size(), 2u);
  EXPECT_EQ(tiny.phases[1].collapse, CollapseMode::kAttention);
}
