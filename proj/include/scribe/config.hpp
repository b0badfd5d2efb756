#pragma once

// Experiment configuration: flat `key = value` lines grouped in [sections].
// Unknown sections and keys are errors. [phase] may repeat; phases given in
// a file replace the default curriculum. '#' starts a comment outside
// quotes; string values may be double-quoted to keep surrounding spaces.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "scribe/train.hpp"

namespace scribe {

struct DataConfig {
  std::string train;       // manifest path
  std::string validation;  // manifest path, may be empty
  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  DataConfig data;
  ModelConfig model;
  OptimizerConfig optimizer;
  CtcTarget ctc = CtcTarget::kParagraph;
  std::vector<CurriculumPhase> phases = default_curriculum();

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    model.validate();
    optimizer.validate();
    if (phases.empty()) throw ConfigError("config: no curriculum phases");
    for (const auto& p : phases) p.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

// Strips an unquoted comment and returns the line's content.
inline std::string strip_comment(const std::string& line) {
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_quotes) {
      ++i;
    } else if (line[i] == '"') {
      in_quotes = !in_quotes;
    } else if (line[i] == '#' && !in_quotes) {
      return line.substr(0, i);
    }
  }
  return line;
}

inline std::string unquote(const std::string& v) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') return v;
  std::string out;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] == '\\' && i + 2 < v.size()) ++i;
    out += v[i];
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("'" + v + "' is not a valid number");
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;

inline Field string_field(std::string& s) {
  return {[&s](const std::string& v) { s = unquote(v); }, [&s] { return quote(s); }};
}

template <typename T>
Field number_field(T& x) {
  if constexpr (std::is_floating_point_v<T>) {
    return {[&x](const std::string& v) { x = parse_number<T>(v); },
            [&x] { return format_double(x); }};
  } else {
    return {[&x](const std::string& v) { x = parse_number<T>(v); },
            [&x] { return std::to_string(x); }};
  }
}

inline Field size_list_field(std::vector<std::size_t>& xs) {
  return {[&xs](const std::string& v) {
            xs.clear();
            for (const auto& s : split_list(v)) xs.push_back(parse_number<std::size_t>(s));
          },
          [&xs] {
            std::string out;
            for (std::size_t k = 0; k < xs.size(); ++k) out += (k ? ", " : "") + std::to_string(xs[k]);
            return out;
          }};
}

// Kernels are written `<width>x<height>`.
inline Field kernel_list_field(std::vector<KernelSize>& ks) {
  return {[&ks](const std::string& v) {
            ks.clear();
            for (const auto& s : split_list(v)) {
              const auto x = s.find('x');
              if (x == std::string::npos) throw ConfigError("kernel '" + s + "' is not <width>x<height>");
              ks.push_back({parse_number<std::size_t>(s.substr(0, x)),
                            parse_number<std::size_t>(s.substr(x + 1))});
            }
          },
          [&ks] {
            std::string out;
            for (std::size_t k = 0; k < ks.size(); ++k)
              out += (k ? ", " : "") + std::to_string(ks[k].width) + "x" + std::to_string(ks[k].height);
            return out;
          }};
}

template <typename E>
Field enum_field(E& e, std::vector<std::pair<std::string, E>> names) {
  return {[&e, names](const std::string& v) {
            for (const auto& [n, value] : names)
              if (n == v) {
                e = value;
                return;
              }
            std::string allowed;
            for (const auto& [n, value] : names) allowed += (allowed.empty() ? "" : "|") + n;
            throw ConfigError("'" + v + "' is not one of " + allowed);
          },
          [&e, names] {
            for (const auto& [n, value] : names)
              if (value == e) return n;
            return std::string("?");
          }};
}

inline Field collapse_field(CollapseMode& m) {
  return enum_field(m, std::vector<std::pair<std::string, CollapseMode>>{
                           {"standard", CollapseMode::kStandard}, {"attention", CollapseMode::kAttention}});
}

inline std::map<std::string, FieldTable> section_fields(ExperimentConfig& c) {
  std::map<std::string, FieldTable> t;
  t["experiment"] = {{"seed", number_field(c.seed)}, {"out", string_field(c.out)}};
  t["data"] = {{"train", string_field(c.data.train)}, {"validation", string_field(c.data.validation)}};
  auto& m = c.model;
  t["model"] = {
      {"alphabet", string_field(m.alphabet)},
      {"line_separator", string_field(m.line_separator)},
      {"decoder", enum_field(m.decoder, std::vector<std::pair<std::string, DecoderKind>>{
                                            {"blstm", DecoderKind::kBlstm}, {"softmax", DecoderKind::kSoftmax}})},
      {"decoder_units", number_field(m.decoder_units)}};
  auto& e = m.encoder;
  t["encoder"] = {{"tile_height", number_field(e.tile_height)},
                  {"tile_width", number_field(e.tile_width)},
                  {"mdlstm_units", size_list_field(e.mdlstm_units)},
                  {"conv_filters", size_list_field(e.conv_filters)},
                  {"conv_kernels", kernel_list_field(e.conv_kernels)},
                  {"output_dim", number_field(e.output_dim)}};
  t["attention"] = {{"units", number_field(m.attention_units)},
                    {"steps", number_field(m.attention_steps)}};
  auto& o = c.optimizer;
  t["optimizer"] = {{"learning_rate", number_field(o.learning_rate)},
                    {"decay", number_field(o.decay)},
                    {"epsilon", number_field(o.epsilon)},
                    {"batch_size", number_field(o.batch_size)},
                    {"grad_clip", number_field(o.grad_clip)}};
  t["training"] = {{"ctc", enum_field(c.ctc, std::vector<std::pair<std::string, CtcTarget>>{
                                                 {"paragraph", CtcTarget::kParagraph},
                                                 {"line", CtcTarget::kPerLine}})}};
  return t;
}

inline FieldTable phase_fields(CurriculumPhase& p) {
  return {{"name", string_field(p.name)},
          {"max_lines", number_field(p.max_lines)},
          {"epochs", number_field(p.epochs)},
          {"collapse", collapse_field(p.collapse)},
          {"target_cer", number_field(p.target_cer)}};
}

}  // namespace detail

/// Parses config text; `origin` names the source in error messages.
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  auto sections = detail::section_fields(cfg);
  std::vector<CurriculumPhase> phases;
  std::string section;
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError(detail::concat(origin, ":", line_no, ": ", what));
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section == "phase") {
        phases.push_back({});
        phases.back().name = "phase" + std::to_string(phases.size());
      } else if (!sections.count(section)) {
        fail("unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty()) fail("key '" + key + "' outside any section");
    const auto table = section == "phase" ? detail::phase_fields(phases.back()) : sections.at(section);
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) fail("unknown key '" + key + "' in [" + section + "]");
    try {
      it->second.set(value);
    } catch (const ConfigError& e) {
      fail("[" + section + "] " + key + ": " + e.what());
    }
  }
  if (!phases.empty()) cfg.phases = std::move(phases);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

/// Every field, explicitly; parse(serialize(c)) == c.
inline std::string serialize_config(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  std::ostringstream os;
  const auto sections = detail::section_fields(c);
  for (const char* name : {"experiment", "data", "model", "encoder", "attention", "optimizer", "training"}) {
    os << "[" << name << "]\n";
    for (const auto& [key, field] : sections.at(name)) os << key << " = " << field.get() << "\n";
    os << "\n";
  }
  for (auto& p : c.phases) {
    os << "[phase]\n";
    for (const auto& [key, field] : detail::phase_fields(p)) os << key << " = " << field.get() << "\n";
    os << "\n";
  }
  return os.str();
}

inline void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write config " + path.string());
  os << serialize_config(c);
  if (!os) throw IoError("failed writing config " + path.string());
}

// ---------------------------------------------------------------------------
// checkpoints: parameters at <path>, producing config at <path>.cfg

inline std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".cfg";
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const ExperimentConfig& cfg) {
  save_parameters(path, model.parameters());
  save_config(config_sidecar(path), cfg);
}

/// Rebuilds the model from the sidecar config, then loads its weights.
inline std::pair<ExperimentConfig, std::unique_ptr<Model>> load_checkpoint(
    const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no checkpoint at " + path.string());
  auto cfg = load_config(config_sidecar(path));
  auto model = std::make_unique<Model>(cfg.model, cfg.seed);
  load_parameters(path, model->parameters());
  return {std::move(cfg), std::move(model)};
}

}  // namespace scribe
