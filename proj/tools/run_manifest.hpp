#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace xastruct::cli {

namespace fs = std::filesystem;

/// Hex SHA-1 of "blob <size>\0" + content, as `git hash-object` prints it.
std::string GitBlobHash(std::string_view content);

struct HashedInput {
  std::string path;
  std::string hash;
};

/// Hashes a file, or every regular file under a directory in path order.
std::vector<HashedInput> HashInputs(const fs::path& path);

/// Audit record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::optional<std::string> config_path;
  std::uint64_t seed = 0;
  std::vector<HashedInput> inputs;
  std::vector<std::string> outputs;  // relative to the run directory

  void AddInput(const fs::path& path);
  void AddOutput(const fs::path& run_dir, const fs::path& path);

  nlohmann::json ToJson() const;
  /// Writes run_manifest.json under `run_dir`.
  void Write(const fs::path& run_dir) const;
};

}  // namespace xastruct::cli
