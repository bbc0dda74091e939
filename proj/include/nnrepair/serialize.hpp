#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "nnrepair/dataset.hpp"
#include "nnrepair/model.hpp"

#include <json.hpp>

namespace nnrepair {

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kDatasetFormatVersion = 1;

// Model files are a JSON manifest; weights and biases are inline base64 of
// little-endian IEEE-754 doubles, row-major.
nlohmann::ordered_json model_to_json(const Model& model,
                                     const nlohmann::ordered_json& provenance = {});
Model model_from_json(const nlohmann::json& doc);
void save_model(const Model& model, const std::filesystem::path& path,
                const nlohmann::ordered_json& provenance = {});
Model load_model(const std::filesystem::path& path);

// Dataset files are CSV: a "# nnrepair-dataset ..." version line, then a
// header `id,label,f0..f{d-1}`.
std::string dataset_to_csv(const Dataset& dataset);
Dataset dataset_from_csv(std::string_view text);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace nnrepair
