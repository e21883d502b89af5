#include "dosepred/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace dosepred {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& params,
                     const fs::path& stem) {
  ordered_json manifest = ordered_json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : params) {
    manifest.push_back(
        {{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  std::ofstream jout(stem.string() + ".json", std::ios::binary);
  if (!jout) throw std::runtime_error("cannot write checkpoint manifest");
  jout << manifest.dump(2) << "\n";

  std::ofstream bout(stem.string() + ".bin", std::ios::binary);
  if (!bout) throw std::runtime_error("cannot write checkpoint data");
  for (const auto& [name, t] : params)
    bout.write(reinterpret_cast<const char*>(t.data().data()),
               static_cast<std::streamsize>(t.data().size() * sizeof(double)));
}

void load_checkpoint(std::vector<std::pair<std::string, Tensor>>& params,
                     const fs::path& stem) {
  std::ifstream jin(stem.string() + ".json", std::ios::binary);
  if (!jin) throw std::runtime_error("cannot read checkpoint manifest");
  ordered_json manifest = ordered_json::parse(jin);
  if (manifest.size() != params.size())
    throw std::runtime_error("checkpoint parameter count mismatch");

  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read checkpoint data");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != name)
      throw std::runtime_error("checkpoint name mismatch at " + name);
    if (entry.at("shape").get<Shape>() != t.shape())
      throw std::runtime_error("checkpoint shape mismatch at " + name);
    bin.read(reinterpret_cast<char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    if (!bin) throw std::runtime_error("checkpoint data truncated at " + name);
  }
}

}  // namespace dosepred
