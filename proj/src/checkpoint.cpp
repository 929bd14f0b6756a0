#include "duple/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "duple/error.hpp"

namespace duple {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  for (std::size_t k = 0; k < n; ++k) {
    h ^= data[k];
    h *= kFnvPrime;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

std::uint64_t parse_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::vector<unsigned char> to_le_bytes(const Eigen::VectorXd& v) {
  std::vector<unsigned char> out(v.size() * 8);
  for (Index k = 0; k < v.size(); ++k) {
    auto bits = std::bit_cast<std::uint64_t>(v[k]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(out.data() + 8 * k, &bits, 8);
  }
  return out;
}

}  // namespace

std::uint64_t vocabulary_hash(const std::vector<std::string>& vocabulary) {
  std::uint64_t h = kFnvOffset;
  for (const auto& w : vocabulary) {
    h = fnv1a(reinterpret_cast<const unsigned char*>(w.data()), w.size(), h);
    const unsigned char nl = '\n';
    h = fnv1a(&nl, 1, h);
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  const auto bytes = to_le_bytes(params.values());
  {
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    bin.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!bin) throw InputError("cannot write " + (dir / "params.bin").string());
  }
  const auto& cfg = params.config();
  nlohmann::json j;
  j["format"] = "duple-checkpoint-1";
  j["variant"] = std::string(variant_name(cfg.variant));
  j["lambda"] = cfg.lambda;
  j["jitter"] = cfg.jitter;
  j["shape"] = {{"n_users", cfg.shape.n_users},       {"n_items", cfg.shape.n_items},
                {"n_attributes", cfg.shape.n_attributes}, {"raw_dim", cfg.shape.raw_dim},
                {"dim", cfg.shape.dim},               {"rank", cfg.shape.rank}};
  j["seed"] = info.seed;
  j["steps"] = info.steps;
  j["best_step"] = info.best_step;
  j["best_val_mrr"] = info.best_val_mrr;
  j["vocabulary_hash"] = hex(info.vocabulary_hash);
  j["params_fnv1a"] = hex(fnv1a(bytes.data(), bytes.size()));
  j["dtype"] = "float64-le";
  j["tensors"] = nlohmann::json::array();
  for (const auto& s : params.layout().specs()) {
    j["tensors"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols},
                            {"offset", s.offset}});
  }
  std::ofstream(dir / "manifest.json") << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto bin_path = dir / "params.bin";
  if (!std::filesystem::exists(manifest_path)) {
    throw InputError("checkpoint manifest not found: " + manifest_path.string());
  }
  if (!std::filesystem::exists(bin_path)) {
    throw InputError("checkpoint payload not found: " + bin_path.string());
  }
  nlohmann::json j;
  try {
    std::ifstream in(manifest_path);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("unreadable manifest " + manifest_path.string() + ": " + e.what());
  }

  Checkpoint ck;
  ModelConfig cfg;
  std::uint64_t payload_hash = 0;
  try {
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.lambda = j.at("lambda").get<double>();
    cfg.jitter = j.at("jitter").get<double>();
    const auto& s = j.at("shape");
    cfg.shape.n_users = s.at("n_users").get<Index>();
    cfg.shape.n_items = s.at("n_items").get<Index>();
    cfg.shape.n_attributes = s.at("n_attributes").get<Index>();
    cfg.shape.raw_dim = s.at("raw_dim").get<Index>();
    cfg.shape.dim = s.at("dim").get<Index>();
    cfg.shape.rank = s.at("rank").get<Index>();
    ck.info.seed = j.at("seed").get<std::uint64_t>();
    ck.info.steps = j.value("steps", Index{0});
    ck.info.best_step = j.value("best_step", Index{0});
    // null when no validation ran
    const auto& mrr = j.at("best_val_mrr");
    ck.info.best_val_mrr =
        mrr.is_null() ? std::numeric_limits<double>::quiet_NaN() : mrr.get<double>();
    ck.info.vocabulary_hash = parse_hex(j.at("vocabulary_hash").get<std::string>());
    payload_hash = parse_hex(j.at("params_fnv1a").get<std::string>());
    if (j.value("dtype", std::string{}) != "float64-le") {
      throw IntegrityError("unsupported dtype in " + manifest_path.string());
    }
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("manifest " + manifest_path.string() + " is incomplete: " + e.what());
  } catch (const UsageError& e) {
    throw IntegrityError("manifest " + manifest_path.string() + " is invalid: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IntegrityError("manifest " + manifest_path.string() + " is invalid: " + e.what());
  }

  ModelParams params(cfg);
  const auto& tensors = j.at("tensors");
  const auto& specs = params.layout().specs();
  if (!tensors.is_array() || tensors.size() != specs.size()) {
    throw IntegrityError("manifest lists " + std::to_string(tensors.size()) +
                         " tensors, model expects " + std::to_string(specs.size()));
  }
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& t = tensors[k];
    const auto& s = specs[k];
    if (t.value("name", std::string{}) != s.name || t.value("rows", Index{-1}) != s.rows ||
        t.value("cols", Index{-1}) != s.cols || t.value("offset", Index{-1}) != s.offset) {
      throw IntegrityError("tensor " + std::to_string(k) + " mismatch: manifest has " +
                           t.dump() + ", model expects " + s.name + " " +
                           std::to_string(s.rows) + "x" + std::to_string(s.cols) + " @" +
                           std::to_string(s.offset));
    }
  }

  const auto expected = static_cast<std::uintmax_t>(params.values().size()) * 8;
  const auto actual = std::filesystem::file_size(bin_path);
  if (actual != expected) {
    throw IntegrityError("params.bin holds " + std::to_string(actual) + " bytes, manifest needs " +
                         std::to_string(expected));
  }
  std::vector<unsigned char> bytes(expected);
  std::ifstream bin(bin_path, std::ios::binary);
  bin.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!bin) throw InputError("cannot read " + bin_path.string());
  if (payload_hash != fnv1a(bytes.data(), bytes.size())) {
    throw IntegrityError("params.bin checksum does not match the manifest");
  }
  auto& v = params.values();
  for (Index k = 0; k < v.size(); ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + 8 * k, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v[k] = std::bit_cast<double>(bits);
  }
  ck.params = std::move(params);
  return ck;
}

void check_matches_bundle(const Checkpoint& ckpt, Index n_users, Index n_items,
                          const std::vector<std::string>& vocabulary) {
  const auto& s = ckpt.params.shape();
  if (s.n_users != n_users || s.n_items != n_items ||
      s.n_attributes != static_cast<Index>(vocabulary.size())) {
    throw IntegrityError("checkpoint shape (" + std::to_string(s.n_users) + " users, " +
                         std::to_string(s.n_items) + " items, " +
                         std::to_string(s.n_attributes) + " attributes) does not match bundle (" +
                         std::to_string(n_users) + ", " + std::to_string(n_items) + ", " +
                         std::to_string(vocabulary.size()) + ")");
  }
  if (ckpt.info.vocabulary_hash != vocabulary_hash(vocabulary)) {
    throw IntegrityError("checkpoint vocabulary hash differs from the bundle vocabulary");
  }
}

}  // namespace duple
