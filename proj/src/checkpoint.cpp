#include "semfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "semfuse/errors.hpp"
#include "semfuse/json_io.hpp"
#include "semfuse/semantics.hpp"

namespace semfuse {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLength = sizeof(kCheckpointMagic) - 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const LanguageModel<float>& model,
                     const CheckpointInfo& info) {
  nlohmann::ordered_json header;
  header["format"] = kCheckpointMagic;
  header["config"] = nlohmann::json(model.config());
  header["vocabulary"] = info.vocabulary;
  header["features"] = info.features;
  header["feature_bank_version"] = FeatureBank::kVersion;
  header["seed"] = info.seed;
  header["init_seed"] = model.init_seed();
  header["epoch"] = info.epoch;
  header["metrics"] = info.metrics;
  header["extra"] = info.extra;
  nlohmann::ordered_json arrays = nlohmann::ordered_json::array();
  for (const auto* p : model.parameters()) {
    arrays.push_back({{"name", p->name}, {"shape", p->value.shape}});
  }
  header["arrays"] = arrays;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(kCheckpointMagic, kMagicLength);
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : model.parameters()) {
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[kMagicLength];
  in.read(magic, kMagicLength);
  if (!in || std::memcmp(magic, kCheckpointMagic, kMagicLength) != 0) {
    throw DataError("'" + path.string() + "' is not an SFLM1 checkpoint");
  }
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || length > (std::uint64_t{1} << 30)) {
    throw DataError("corrupt checkpoint header length in '" + path.string() + "'");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("truncated checkpoint header in '" + path.string() + "'");

  CheckpointInfo info;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    info.config = header.at("config").get<ModelConfig>();
    info.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    info.features = header.at("features").get<std::vector<std::string>>();
    info.seed = header.at("seed").get<std::uint64_t>();
    info.epoch = header.at("epoch").get<int>();
    info.metrics = header.value("metrics", nlohmann::json::object());
    info.extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in '" + path.string() +
                    "': " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("bad config in checkpoint '" + path.string() + "': " + e.what());
  }
  if (header.value("feature_bank_version", 0) != FeatureBank::kVersion) {
    throw DataError("checkpoint '" + path.string() +
                    "' was written with a different feature bank version");
  }

  LanguageModel<float> model(info.config, header.value("init_seed", std::uint64_t{0}));
  const auto& arrays = header.at("arrays");
  const auto params = model.parameters();
  if (arrays.size() != params.size()) {
    throw DataError("checkpoint '" + path.string() + "' has " +
                    std::to_string(arrays.size()) + " arrays, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = arrays[i].at("name").get<std::string>();
    const auto shape = arrays[i].at("shape").get<Shape>();
    if (name != params[i]->name || shape != params[i]->value.shape) {
      throw DataError("checkpoint array " + std::to_string(i) + " is " + name +
                      shape_to_string(shape) + ", model expects " +
                      params[i]->name + shape_to_string(params[i]->value.shape));
    }
    in.read(reinterpret_cast<char*>(params[i]->value.data.data()),
            static_cast<std::streamsize>(params[i]->value.size() * sizeof(float)));
    if (!in) throw DataError("truncated array '" + name + "' in '" + path.string() + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes after arrays in '" + path.string() + "'");
  }
  return LoadedCheckpoint{std::move(info), std::move(model)};
}

}  // namespace semfuse
