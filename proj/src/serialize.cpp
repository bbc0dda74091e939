#include "nnrepair/serialize.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "nnrepair/errors.hpp"

namespace nnrepair {

namespace {

constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string doubles_to_bytes(const std::vector<double>& values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
  return out;
}

std::vector<double> bytes_to_doubles(std::string_view bytes, std::size_t expected,
                                     std::string_view what) {
  if (bytes.size() != expected * 8) {
    throw FormatError(fmt::format("{}: expected {} values, found {} bytes", what, expected,
                                  bytes.size()));
  }
  std::vector<double> out(expected);
  for (std::size_t k = 0; k < expected; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[k * 8 + b])) << (8 * b);
    }
    out[k] = std::bit_cast<double>(bits);
    if (!std::isfinite(out[k])) throw FormatError(fmt::format("{}: non-finite value", what));
  }
  return out;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t k = 0;
  for (; k + 2 < bytes.size(); k += 3) {
    std::uint32_t v = (static_cast<unsigned char>(bytes[k]) << 16) |
                      (static_cast<unsigned char>(bytes[k + 1]) << 8) |
                      static_cast<unsigned char>(bytes[k + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  if (std::size_t rest = bytes.size() - k; rest > 0) {
    std::uint32_t v = static_cast<unsigned char>(bytes[k]) << 16;
    if (rest == 2) v |= static_cast<unsigned char>(bytes[k + 1]) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t k = 0; k < kAlphabet.size(); ++k) lookup[static_cast<unsigned char>(kAlphabet[k])] = static_cast<int>(k);
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t k = 0; k < text.size(); k += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (std::size_t q = 0; q < 4; ++q) {
      char c = text[k + q];
      if (c == '=' && k + 4 == text.size() && q >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      int d = lookup[static_cast<unsigned char>(c)];
      if (d < 0 || pad > 0) throw FormatError("invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw FormatError(fmt::format("cannot parse number '{}'", s));
  }
  return v;
}

nlohmann::ordered_json model_to_json(const Model& model, const nlohmann::ordered_json& provenance) {
  nlohmann::ordered_json doc;
  doc["format"] = "nnrepair-model";
  doc["version"] = kModelFormatVersion;
  doc["n_classes"] = model.num_classes();
  auto& layers = doc["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : model.layers()) {
    nlohmann::ordered_json j;
    j["kind"] = "dense";
    j["input_size"] = l.spec.input_size;
    j["output_size"] = l.spec.output_size;
    j["activation"] = std::string(to_string(l.spec.activation));
    j["weights"] = base64_encode(doubles_to_bytes(l.weights.values()));
    j["bias"] = base64_encode(doubles_to_bytes(l.bias));
    layers.push_back(std::move(j));
  }
  if (!provenance.is_null()) doc["provenance"] = provenance;
  return doc;
}

Model model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "nnrepair-model") {
      throw FormatError("not an nnrepair model file");
    }
    if (int v = doc.at("version").get<int>(); v != kModelFormatVersion) {
      throw FormatError(fmt::format("unsupported model format version {}", v));
    }
    std::vector<DenseLayer> layers;
    for (const auto& j : doc.at("layers")) {
      if (j.at("kind").get<std::string>() != "dense") throw FormatError("unsupported layer kind");
      DenseLayer l;
      l.spec.input_size = j.at("input_size").get<std::size_t>();
      l.spec.output_size = j.at("output_size").get<std::size_t>();
      l.spec.activation = activation_from_string(j.at("activation").get<std::string>());
      l.weights = Matrix(l.spec.input_size, l.spec.output_size);
      l.weights.values() = bytes_to_doubles(base64_decode(j.at("weights").get<std::string>()),
                                            l.spec.input_size * l.spec.output_size, "weights");
      l.bias = bytes_to_doubles(base64_decode(j.at("bias").get<std::string>()),
                                l.spec.output_size, "bias");
      layers.push_back(std::move(l));
    }
    Model m(std::move(layers));
    if (m.num_classes() != doc.at("n_classes").get<std::size_t>()) {
      throw FormatError("n_classes does not match the output layer");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed model file: {}", e.what()));
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(fmt::format("invalid model: {}", e.what()));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(fmt::format("write failed for {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

void save_model(const Model& model, const std::filesystem::path& path,
                const nlohmann::ordered_json& provenance) {
  write_file(path, model_to_json(model, provenance).dump(2) + "\n");
}

Model load_model(const std::filesystem::path& path) {
  auto text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed model file {}: {}", path.string(), e.what()));
  }
  return model_from_json(doc);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_uint(std::string_view s, std::string_view what) {
  T v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw FormatError(fmt::format("bad {} '{}'", what, s));
  }
  return v;
}

}  // namespace

std::string dataset_to_csv(const Dataset& dataset) {
  std::string out =
      fmt::format("# nnrepair-dataset version={} n_classes={} n_samples={} class_names=",
                  kDatasetFormatVersion, dataset.n_classes, dataset.size());
  for (std::size_t c = 0; c < dataset.class_names.size(); ++c) {
    if (c) out += ';';
    out += dataset.class_names[c];
  }
  out += "\nid,label";
  const std::size_t d = dataset.data.inputs.cols();
  for (std::size_t f = 0; f < d; ++f) out += fmt::format(",f{}", f);
  out += '\n';
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    out += fmt::format("{},{}", dataset.data.ids[s], dataset.data.labels[s]);
    for (double v : dataset.data.inputs.row(s)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

Dataset dataset_from_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  for (auto line : split_fields(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
  }
  if (!text.empty() && text.back() != '\n') {
    throw FormatError("dataset file is truncated (no trailing newline)");
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 2) throw FormatError("dataset file is missing its header");

  Dataset ds;
  constexpr std::string_view kMagic = "# nnrepair-dataset ";
  if (!lines[0].starts_with(kMagic)) throw FormatError("missing nnrepair-dataset version line");
  bool have_version = false, have_classes = false;
  std::size_t declared_rows = 0;
  for (auto kv : split_fields(lines[0].substr(kMagic.size()), ' ')) {
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw FormatError(fmt::format("bad header field '{}'", kv));
    auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "version") {
      if (int v = parse_uint<int>(val, "version"); v != kDatasetFormatVersion) {
        throw FormatError(fmt::format("unsupported dataset format version {}", v));
      }
      have_version = true;
    } else if (key == "n_classes") {
      ds.n_classes = parse_uint<std::size_t>(val, "n_classes");
      have_classes = true;
    } else if (key == "n_samples") {
      declared_rows = parse_uint<std::size_t>(val, "n_samples");
    } else if (key == "class_names") {
      if (!val.empty()) {
        for (auto name : split_fields(val, ';')) ds.class_names.emplace_back(name);
      }
    }
  }
  if (!have_version || !have_classes) throw FormatError("dataset header lacks version or n_classes");

  auto header = split_fields(lines[1], ',');
  if (header.size() < 2 || header[0] != "id" || header[1] != "label") {
    throw FormatError("dataset header must start with id,label");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t f = 0; f < d; ++f) {
    if (header[f + 2] != fmt::format("f{}", f)) throw FormatError("feature columns must be f0..f{d-1}");
  }
  const std::size_t n = lines.size() - 2;
  if (n != declared_rows) {
    throw FormatError(fmt::format("dataset declares {} rows but contains {}", declared_rows, n));
  }
  ds.data.inputs = Matrix(n, d);
  ds.data.labels.reserve(n);
  ds.data.ids.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto fields = split_fields(lines[s + 2], ',');
    if (fields.size() != d + 2) {
      throw FormatError(fmt::format("row {} has {} fields, expected {}", s, fields.size(), d + 2));
    }
    ds.data.ids.push_back(parse_uint<SampleId>(fields[0], "sample id"));
    ds.data.labels.push_back(parse_uint<std::size_t>(fields[1], "label"));
    for (std::size_t f = 0; f < d; ++f) ds.data.inputs(s, f) = parse_double(fields[f + 2]);
  }
  try {
    ds.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, dataset_to_csv(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_csv(read_file(path)); }

}  // namespace nnrepair
