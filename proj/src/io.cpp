#include "equicaps/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace equicaps {

namespace fs = std::filesystem;
using nlohmann::json;

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- images

namespace {

// Reads the next whitespace separated header token, skipping '#' comments.
std::string pgm_token(const std::string& s, std::size_t& pos) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) throw IoError("PGM: truncated header");
  return s.substr(start, pos - start);
}

std::size_t parse_extent(const std::string& tok, const char* what) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || v <= 0) throw IoError(std::string("PGM: invalid ") + what + " '" + tok + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

ImageGrid parse_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = pgm_token(bytes, pos);
  if (magic != "P2" && magic != "P5") throw IoError("PGM: unsupported magic '" + magic + "'");
  const std::size_t w = parse_extent(pgm_token(bytes, pos), "width");
  const std::size_t h = parse_extent(pgm_token(bytes, pos), "height");
  const std::size_t maxval = parse_extent(pgm_token(bytes, pos), "maxval");
  if (maxval != 255) throw IoError("PGM: only maxval 255 is supported, got " + std::to_string(maxval));
  ImageGrid img(h, w);
  if (magic == "P5") {
    ++pos;  // single whitespace byte after maxval
    if (bytes.size() < pos + h * w) throw IoError("PGM: truncated pixel data");
    for (std::size_t i = 0; i < h * w; ++i) {
      img.pixels()[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    }
    return img;
  }
  for (std::size_t i = 0; i < h * w; ++i) {
    const std::size_t v = std::stoul(pgm_token(bytes, pos));
    if (v > 255) throw IoError("PGM: pixel value above maxval");
    img.pixels()[i] = static_cast<double>(v) / 255.0;
  }
  return img;
}

ImageGrid parse_csv_image(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw IoError("CSV image: invalid value '" + cell + "' in row " + std::to_string(rows.size() + 1));
      }
      if (cell.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v)) {
        throw IoError("CSV image: invalid value '" + cell + "' in row " + std::to_string(rows.size() + 1));
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError("CSV image: row " + std::to_string(rows.size() + 1) + " has " + std::to_string(row.size()) +
                    " values, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("CSV image: no rows");
  ImageGrid img(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) img.at(r, c) = rows[r][c];
  }
  return img;
}

ImageGrid load_image(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return parse_pgm(read_file(path));
  if (ext == ".csv") return parse_csv_image(read_file(path));
  throw IoError("unsupported image format '" + ext + "' (expected .pgm or .csv)");
}

std::string format_pgm(const ImageGrid& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  for (double v : img.pixels()) {
    const double c = std::min(1.0, std::max(0.0, v));
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

// ---------------------------------------------------------------- config

namespace {

json config_json(const NetworkConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages) {
    stages.push_back({{"capsules", s.capsules}, {"iterations", s.iterations}, {"channels", s.channels}});
  }
  return {{"stages", stages},
          {"classes", cfg.classes},
          {"image_size", cfg.image_size},
          {"mlp_hidden", cfg.mlp_hidden},
          {"kernel_size", cfg.kernel_size},
          {"block_size", cfg.geometry.size},
          {"block_stride", cfg.geometry.stride},
          {"sigma_alpha", cfg.sigma_init.alpha},
          {"sigma_beta", cfg.sigma_init.beta},
          {"epochs", cfg.epochs},
          {"learning_rate", cfg.learning_rate},
          {"margin_start", cfg.margin_start},
          {"margin_end", cfg.margin_end},
          {"batch_size", cfg.batch_size},
          {"train_samples", cfg.train_samples},
          {"holdout_samples", cfg.holdout_samples},
          {"seed", cfg.seed}};
}

NetworkConfig config_parse(const json& j) {
  NetworkConfig cfg;
  cfg.stages.clear();
  for (const auto& s : j.at("stages")) {
    cfg.stages.push_back({s.at("capsules").get<std::size_t>(), s.at("iterations").get<int>(),
                          s.at("channels").get<std::size_t>()});
  }
  cfg.classes = j.at("classes").get<std::size_t>();
  cfg.image_size = j.at("image_size").get<std::size_t>();
  cfg.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  cfg.kernel_size = j.at("kernel_size").get<std::size_t>();
  cfg.geometry = {j.at("block_size").get<int>(), j.at("block_stride").get<int>()};
  cfg.sigma_init = {j.at("sigma_alpha").get<double>(), j.at("sigma_beta").get<double>()};
  cfg.epochs = j.at("epochs").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.margin_start = j.at("margin_start").get<double>();
  cfg.margin_end = j.at("margin_end").get<double>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.train_samples = j.at("train_samples").get<std::size_t>();
  cfg.holdout_samples = j.at("holdout_samples").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

std::string config_to_json(const NetworkConfig& cfg) { return config_json(cfg).dump(); }

NetworkConfig config_from_json(const std::string& text) {
  try {
    return config_parse(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid network config: ") + e.what());
  }
}

// ---------------------------------------------------------------- snapshots

namespace {

constexpr const char* kSnapshotFormat = "equicaps-trainstate";

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> data;
};

std::vector<Tensor> tensors(TrainState& st) {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < st.stages.size(); ++l) {
    StageParams& sp = st.stages[l];
    const std::string p = "stage" + std::to_string(l) + ".";
    out.push_back({p + "mlp", {sp.mlp.param_count()}, sp.mlp.params()});
    out.push_back({p + "sigma", {2}, std::span<double>(&sp.sigma.alpha, 1)});
    for (std::size_t j = 0; j < sp.kernels.size(); ++j) {
      ContinuousKernel& k = sp.kernels[j];
      out.push_back({p + "kernel" + std::to_string(j), {k.offsets.size(), k.in_channels, k.out_channels}, k.taps});
    }
    out.push_back({p + "bias", {sp.bias.size()}, sp.bias});
  }
  out.push_back({"head.weight", {st.config.classes, st.feature_width()}, st.head_weight});
  out.push_back({"head.bias", {st.config.classes}, st.head_bias});
  return out;
}

std::size_t element_count(const Tensor& t) {
  std::size_t n = 1;
  for (std::size_t d : t.shape) n *= d;
  return n;
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

// The sigma tensor spans alpha and beta, which are separate members.
double* element(Tensor& t, std::size_t i, SigmaParams* sigma) {
  if (sigma != nullptr) return i == 0 ? &sigma->alpha : &sigma->beta;
  return &t.data[i];
}

SigmaParams* sigma_of(TrainState& st, const Tensor& t) {
  if (t.name.size() < 6 || t.name.compare(t.name.size() - 6, 6, ".sigma") != 0) return nullptr;
  return &st.stages[std::stoul(t.name.substr(5))].sigma;
}

}  // namespace

std::string serialize_snapshot(const TrainState& state) {
  TrainState st = state;
  std::vector<Tensor> ts = tensors(st);
  json header;
  header["format"] = kSnapshotFormat;
  header["schema_version"] = 1;
  header["config"] = config_json(st.config);
  header["epoch"] = st.epoch;
  header["seed"] = st.seed;
  json list = json::array();
  std::size_t offset = 0;
  for (const Tensor& t : ts) {
    list.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += element_count(t);
  }
  header["tensors"] = list;
  header["total"] = offset;

  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 8 * offset);
  for (Tensor& t : ts) {
    SigmaParams* sigma = sigma_of(st, t);
    for (std::size_t i = 0; i < element_count(t); ++i) put_f64(out, *element(t, i, sigma));
  }
  return out;
}

TrainState deserialize_snapshot(const std::string& bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw IoError("snapshot: missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw IoError(std::string("snapshot: malformed header: ") + e.what());
  }
  if (header.value("format", "") != kSnapshotFormat || header.value("schema_version", 0) != 1) {
    throw IoError("snapshot: unrecognized format or schema version");
  }
  TrainState st = TrainState::initialize(config_parse(header.at("config")), header.at("seed").get<std::uint64_t>());
  st.epoch = header.at("epoch").get<int>();
  std::vector<Tensor> ts = tensors(st);
  const json& list = header.at("tensors");
  if (list.size() != ts.size()) throw IoError("snapshot: tensor list does not match the config");
  const std::size_t total = header.at("total").get<std::size_t>();
  if (bytes.size() != nl + 1 + 8 * total) throw IoError("snapshot: payload size does not match header");

  for (std::size_t k = 0; k < ts.size(); ++k) {
    Tensor& t = ts[k];
    if (list[k].at("name").get<std::string>() != t.name ||
        list[k].at("shape").get<std::vector<std::size_t>>() != t.shape) {
      throw IoError("snapshot: tensor '" + t.name + "' does not match the config");
    }
    const std::size_t offset = list[k].at("offset").get<std::size_t>();
    if (offset + element_count(t) > total) throw IoError("snapshot: tensor '" + t.name + "' out of bounds");
    SigmaParams* sigma = sigma_of(st, t);
    for (std::size_t i = 0; i < element_count(t); ++i) {
      *element(t, i, sigma) = get_f64(bytes, nl + 1 + 8 * (offset + i));
    }
  }
  if (!st.all_finite()) throw IoError("snapshot: non-finite parameters");
  return st;
}

void save_snapshot(const fs::path& path, const TrainState& state) {
  write_file_atomic(path, serialize_snapshot(state));
}

TrainState load_snapshot(const fs::path& path) { return deserialize_snapshot(read_file(path)); }

}  // namespace equicaps
