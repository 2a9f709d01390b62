#pragma once

// File formats: PGM / CSV images, TrainState snapshots, atomic writes.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "equicaps/grid.hpp"
#include "equicaps/network.hpp"

namespace equicaps {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

// PGM P2 or P5 with maxval 255, rescaled to [0, 1].
ImageGrid parse_pgm(const std::string& bytes);
// H rows of W comma-separated values.
ImageGrid parse_csv_image(const std::string& text);
// Dispatches on the extension (.pgm or .csv).
ImageGrid load_image(const std::filesystem::path& path);
std::string format_pgm(const ImageGrid& img);  // P5

// One line of JSON header, then the parameters as little-endian float64.
std::string serialize_snapshot(const TrainState& state);
TrainState deserialize_snapshot(const std::string& bytes);
void save_snapshot(const std::filesystem::path& path, const TrainState& state);
TrainState load_snapshot(const std::filesystem::path& path);

// nlohmann-compatible JSON text of a config, for printing and headers.
std::string config_to_json(const NetworkConfig& cfg);
NetworkConfig config_from_json(const std::string& text);

}  // namespace equicaps
