#pragma once

#include <algorithm>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace dtameta::cli {

/// Replaces "--config FILE" with the long flags stored in FILE, a flat JSON object whose keys
/// are option names. Arrays become comma lists, true becomes a bare flag and false is dropped.
/// Flags already present on the command line win over the file.
inline std::vector<std::string> expand_json_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed JSON config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("JSON config must be an object");

  auto given = [&](const std::string& flag) {
    return std::any_of(out.begin(), out.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  auto text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };

  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
      continue;
    }
    extra.push_back(flag);
    if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + text(v);
      extra.push_back(joined);
    } else {
      extra.push_back(text(value));
    }
  }
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

}  // namespace dtameta::cli
