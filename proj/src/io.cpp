#include "hpl/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hpl/errors.hpp"

namespace hpl {

std::string read_text(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    std::ostringstream out;
    out << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + file.string());
    return out.str();
}

void write_text(const std::filesystem::path& file, const std::string& text) {
    std::error_code ec;
    if (file.has_parent_path())
        std::filesystem::create_directories(file.parent_path(), ec);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + file.string());
}

nlohmann::json read_json(const std::filesystem::path& file) {
    try {
        return nlohmann::json::parse(read_text(file));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid JSON in " + file.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& file, const nlohmann::json& j,
                int indent) {
    write_text(file, j.dump(indent) + "\n");
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& file) {
    std::istringstream in(read_text(file));
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("invalid JSON on line " + std::to_string(lineno) +
                          " of " + file.string() + ": " + e.what());
        }
    }
    return rows;
}

void write_jsonl(const std::filesystem::path& file,
                 const std::vector<nlohmann::json>& rows) {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump();
        out += '\n';
    }
    write_text(file, out);
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_file(const std::filesystem::path& file) {
    return fnv1a_hex(read_text(file));
}

} // namespace hpl
