#include "crann/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "crann/error.hpp"
#include "crann/models.hpp"

namespace crann {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'A', 'N', 'N', 'C', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated in header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_doubles(std::ostream& out, std::span<const double> v) {
  for (double d : v) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

void get_doubles(std::istream& in, std::span<double> v) {
  for (auto& d : v) d = std::bit_cast<double>(get_u64(in));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Forecaster& model, const NormalizationParams& norm,
                     const WindowConfig& window, const nlohmann::json& extra) {
  const auto& params = model.parameters();
  nlohmann::json meta;
  meta["format"] = 1;
  meta["kind"] = model.kind();
  meta["config"] = model.config();
  meta["normalization"] = norm.to_json();
  meta["window"] = window.to_json();
  meta["extra"] = extra;
  if (model.kind() == "crann") meta["feature_order"] = {"mean", "spatial", "ar", "exog"};
  std::size_t offset = 0;
  meta["tensors"] = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    meta["tensors"].push_back({{"path", t.path}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += t.tensor.numel();
  }
  meta["buffers"] = nlohmann::json::array();
  for (const auto& b : params.buffers()) {
    meta["buffers"].push_back({{"path", b.path}, {"channels", b.stats->running_mean.size()}, {"offset", offset}});
    offset += 2 * b.stats->running_mean.size();
  }
  const auto text = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors()) put_doubles(out, t.tensor.values());
  for (const auto& b : params.buffers()) {
    put_doubles(out, b.stats->running_mean);
    put_doubles(out, b.stats->running_var);
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError(path.string() + " is not a model checkpoint");
  const auto len = get_u64(in);
  if (len > (1u << 30)) throw CheckpointError("checkpoint metadata is implausibly large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated in metadata");

  LoadedModel lm;
  try {
    lm.meta = nlohmann::json::parse(text);
    lm.normalization = NormalizationParams::from_json(lm.meta.at("normalization"));
    lm.window = WindowConfig::from_json(lm.meta.at("window"));
    lm.model = make_forecaster(lm.meta.at("kind").get<std::string>(), lm.meta.at("config"), 0);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  auto& params = lm.model->parameters();
  const auto& tensors = lm.meta.at("tensors");
  const auto& buffers = lm.meta.at("buffers");
  if (tensors.size() != params.tensors().size() || buffers.size() != params.buffers().size())
    throw CheckpointError("checkpoint parameter list does not match the model architecture");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = params.tensors()[i];
    if (tensors[i].at("path") != t.path || tensors[i].at("shape").get<Shape>() != t.tensor.shape())
      throw CheckpointError("checkpoint tensor " + tensors[i].at("path").get<std::string>() +
                            " does not match the model");
    get_doubles(in, t.tensor.mutable_values());
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    auto& b = params.buffers()[i];
    if (buffers[i].at("path") != b.path || buffers[i].at("channels") != b.stats->running_mean.size())
      throw CheckpointError("checkpoint buffer " + buffers[i].at("path").get<std::string>() + " does not match the model");
    get_doubles(in, b.stats->running_mean);
    get_doubles(in, b.stats->running_var);
  }
  if (!in) throw CheckpointError("checkpoint truncated in parameter data");
  return lm;
}

}  // namespace crann
