#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hpl {

/// Reads a whole file; throws IoError when unreadable.
std::string read_text(const std::filesystem::path& file);

/// Writes a whole file, creating parent directories; throws IoError on
/// failure.
void write_text(const std::filesystem::path& file, const std::string& text);

nlohmann::json read_json(const std::filesystem::path& file);
void write_json(const std::filesystem::path& file, const nlohmann::json& j,
                int indent = 2);

/// One compact JSON object per line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& file);
void write_jsonl(const std::filesystem::path& file,
                 const std::vector<nlohmann::json>& rows);

/// FNV-1a 64-bit digest as 16 hex characters.
std::string fnv1a_hex(std::string_view bytes);

/// Digest of a file's bytes; throws IoError when unreadable.
std::string hash_file(const std::filesystem::path& file);

} // namespace hpl
