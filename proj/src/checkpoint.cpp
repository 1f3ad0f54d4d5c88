#include "patchtts/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace patchtts {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'T', 'T', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& os, T v) {
  std::array<unsigned char, sizeof(T)> b;
  for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), sizeof(T))) throw std::invalid_argument("checkpoint truncated");
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void round_to_f32(ParamStore& params) {
  for (Parameter& p : params)
    for (double& v : p.value.data) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const BpeTokenizer& tok,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["model_config"] = model.config();
  header["tokenizer"] = tok.serialize();
  nlohmann::json plist = nlohmann::json::array();
  for (const Parameter& p : model.params()) plist.push_back({{"name", p.name}, {"shape", p.value.shape}});
  header["params"] = plist;
  header["meta"] = meta;
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(kMagic.data(), kMagic.size());
    put_le<uint32_t>(os, kCheckpointVersion);
    put_le<uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter& p : model.params())
      for (double v : p.value.data) put_le<uint32_t>(os, std::bit_cast<uint32_t>(static_cast<float>(v)));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw std::invalid_argument("not a checkpoint: " + path.string());
  const uint32_t version = get_le<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(version));
  const uint64_t len = get_le<uint64_t>(is);
  if (len > (uint64_t{1} << 32)) throw std::invalid_argument("checkpoint header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw std::invalid_argument("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint header: ") + e.what());
  }
  ModelConfig cfg = header.at("model_config").get<ModelConfig>();
  LoadedCheckpoint out{Model(cfg, 0), BpeTokenizer::deserialize(header.at("tokenizer").get<std::string>()),
                       header.value("meta", nlohmann::json::object())};
  ParamStore& params = out.model.params();
  const auto& plist = header.at("params");
  if (plist.size() != params.size()) throw std::invalid_argument("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (plist[i].at("name").get<std::string>() != p.name ||
        plist[i].at("shape").get<std::vector<int>>() != p.value.shape)
      throw std::invalid_argument("checkpoint parameter mismatch at " + p.name);
    for (double& v : p.value.data) v = static_cast<double>(std::bit_cast<float>(get_le<uint32_t>(is)));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::invalid_argument("trailing bytes in checkpoint");
  return out;
}

}  // namespace patchtts
