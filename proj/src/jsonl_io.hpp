#ifndef AIRLAB_SRC_JSONL_IO_HPP_
#define AIRLAB_SRC_JSONL_IO_HPP_

#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace airlab::detail {

// Yields (line_number, parsed object) for every record line, skipping blank
// lines and a leading {"_config": ...} header.
inline std::vector<std::pair<int, nlohmann::json>> read_jsonl_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");
  std::vector<std::pair<int, nlohmann::json>> records;
  std::string line;
  int line_no = 0;
  bool first_record = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed JSON: " +
                               e.what());
    }
    if (first_record && j.is_object() && j.contains("_config")) {
      first_record = false;
      continue;
    }
    first_record = false;
    records.emplace_back(line_no, std::move(j));
  }
  return records;
}

inline std::string require_string(const nlohmann::json& j, const char* field,
                                  const std::string& path, int line_no) {
  if (!j.contains(field) || !j.at(field).is_string()) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing string field '" +
                             field + "'");
  }
  return j.at(field).get<std::string>();
}

inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows,
                        const std::string& config_json) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  if (!config_json.empty()) {
    nlohmann::json header;
    header["_config"] = nlohmann::json::parse(config_json);
    out << header.dump() << "\n";
  }
  for (const auto& row : rows) out << row.dump() << "\n";
  if (!out) throw std::runtime_error("dataset: write failed for '" + path + "'");
}

}  // namespace airlab::detail

#endif  // AIRLAB_SRC_JSONL_IO_HPP_
