#include "ptrack/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace ptrack {

namespace {

namespace fs = std::filesystem;

std::string blob_path(const std::string& manifest_path) {
  fs::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

void write_f32_le(std::ofstream& out, const float* v, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, &v[i], 4);
    buf[4 * i + 0] = (unsigned char)(u & 0xff);
    buf[4 * i + 1] = (unsigned char)((u >> 8) & 0xff);
    buf[4 * i + 2] = (unsigned char)((u >> 16) & 0xff);
    buf[4 * i + 3] = (unsigned char)((u >> 24) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size()));
}

std::vector<float> read_f32_le(const std::string& path,
                               std::size_t expect_scalars) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open blob '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() != expect_scalars * 4)
    throw DataError("checkpoint: blob '" + path + "' holds " +
                    std::to_string(buf.size()) + " bytes, expected " +
                    std::to_string(expect_scalars * 4));
  std::vector<float> v(expect_scalars);
  for (std::size_t i = 0; i < expect_scalars; ++i) {
    std::uint32_t u = std::uint32_t(buf[4 * i]) |
                      (std::uint32_t(buf[4 * i + 1]) << 8) |
                      (std::uint32_t(buf[4 * i + 2]) << 16) |
                      (std::uint32_t(buf[4 * i + 3]) << 24);
    std::memcpy(&v[i], &u, 4);
  }
  return v;
}

nlohmann::json read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: '" + path +
                    "' is not valid JSON: " + e.what());
  }
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const TrainConfig& cfg) {
  nlohmann::json manifest;
  manifest["format"] = "ptrack-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = to_json(cfg);
  manifest["config_hash"] = config_hash(cfg.model);
  manifest["blob"] = fs::path(blob_path(path)).filename().string();
  nlohmann::json plist = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& p : params) {
    nlohmann::json e;
    e["name"] = p.name;
    nlohmann::json shape = nlohmann::json::array();
    for (int i = 0; i < p.shape.nd; ++i) shape.push_back(p.shape.d[i]);
    e["shape"] = shape;
    e["offset"] = offset;  // scalars into the blob
    plist.push_back(e);
    offset += p.shape.numel();
  }
  manifest["params"] = plist;
  manifest["total_scalars"] = offset;

  std::ofstream blob(blob_path(path), std::ios::binary);
  if (!blob)
    throw DataError("checkpoint: cannot write blob next to '" + path + "'");
  for (const auto& p : params)
    write_f32_le(blob, p.value.data(), p.value.size());
  blob.close();
  if (!blob) throw DataError("checkpoint: blob write failed for '" + path + "'");

  std::ofstream out(path);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  out << manifest.dump(2) << "\n";
  out.close();
  if (!out) throw DataError("checkpoint: manifest write failed for '" + path + "'");
}

TrainConfig checkpoint_config(const std::string& path) {
  nlohmann::json j = read_manifest(path);
  if (!j.contains("config") || !j.contains("config_hash"))
    throw DataError("checkpoint: '" + path +
                    "' is missing the config or config_hash field");
  TrainConfig cfg = train_config_from_json(j["config"]);
  const std::string stored = j["config_hash"].get<std::string>();
  const std::string computed = config_hash(cfg.model);
  if (stored != computed)
    throw ConfigError(
        "checkpoint: architecture hash mismatch for '" + path + "' (stored " +
        stored + ", this code computes " + computed +
        "); the checkpoint was produced by an incompatible model version");
  return cfg;
}

void load_checkpoint_params(const std::string& path,
                            ParamStore<float>& params) {
  nlohmann::json j = read_manifest(path);
  checkpoint_config(path);  // re-validate config and hash
  std::size_t total = 0;
  try {
    total = j.at("total_scalars").get<std::size_t>();
    const auto& plist = j.at("params");
    if (std::int64_t(plist.size()) != std::int64_t(params.count()))
      throw DataError("checkpoint: '" + path + "' holds " +
                      std::to_string(plist.size()) + " tensors, model has " +
                      std::to_string(params.count()));
    const std::string blob_file =
        (fs::path(path).parent_path() / j.at("blob").get<std::string>())
            .string();
    std::vector<float> blob = read_f32_le(blob_file, total);
    for (std::size_t i = 0; i < plist.size(); ++i) {
      const auto& e = plist[i];
      auto& p = params.at(int(i));
      const std::string name = e.at("name").get<std::string>();
      if (name != p.name)
        throw DataError("checkpoint: tensor " + std::to_string(i) + " is '" +
                        name + "', model expects '" + p.name + "'");
      Shape s;
      const auto& sj = e.at("shape");
      if (sj.size() < 1 || sj.size() > 3)
        throw DataError("checkpoint: bad shape for '" + name + "'");
      s.nd = int(sj.size());
      for (std::size_t k = 0; k < sj.size(); ++k) s.d[k] = sj[k].get<int>();
      if (!(s == p.shape))
        throw DataError("checkpoint: shape mismatch for '" + name + "': " +
                        s.str() + " vs model " + p.shape.str());
      const std::size_t off = e.at("offset").get<std::size_t>();
      if (off + p.value.size() > blob.size())
        throw DataError("checkpoint: offset out of range for '" + name + "'");
      std::copy(blob.begin() + std::ptrdiff_t(off),
                blob.begin() + std::ptrdiff_t(off + p.value.size()),
                p.value.begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed manifest '" + path +
                    "': " + e.what());
  }
}

}  // namespace ptrack
