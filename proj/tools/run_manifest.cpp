#include "run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>

#include "xastruct/dataset_io.hpp"
#include "xastruct/error.hpp"

namespace xastruct::cli {

std::string GitBlobHash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorCode::kIo, "sha1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::vector<HashedInput> HashInputs(const fs::path& path) {
  std::vector<HashedInput> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.push_back({f.generic_string(), GitBlobHash(io::ReadText(f))});
    }
  } else {
    out.push_back({path.generic_string(), GitBlobHash(io::ReadText(path))});
  }
  return out;
}

void RunManifest::AddInput(const fs::path& path) {
  for (auto& h : HashInputs(path)) inputs.push_back(std::move(h));
}

void RunManifest::AddOutput(const fs::path& run_dir, const fs::path& path) {
  outputs.push_back(path.lexically_relative(run_dir).generic_string());
}

nlohmann::json RunManifest::ToJson() const {
  nlohmann::json j;
  j["command"] = command;
  j["arguments"] = arguments;
  j["config"] = config_path ? nlohmann::json(*config_path) : nlohmann::json(nullptr);
  j["seed"] = seed;
  j["inputs"] = nlohmann::json::array();
  for (const auto& in : inputs) j["inputs"].push_back({{"path", in.path}, {"sha1", in.hash}});
  std::vector<std::string> sorted = outputs;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  j["outputs"] = sorted;
  return j;
}

void RunManifest::Write(const fs::path& run_dir) const {
  io::WriteText(run_dir / "run_manifest.json", ToJson().dump(2) + "\n");
}

}  // namespace xastruct::cli
