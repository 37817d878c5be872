#include "srnr/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "srnr/error.hpp"
#include "srnr/text.hpp"

namespace srnr {

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = text::trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + " has no '='");
    const auto key = text::trim(view.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + " has no key");
    cfg.values_[std::string(key)] = std::string(text::trim(view.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    return text::parse_double(*v);
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' is not a number: " + *v);
  }
}

namespace {

long long parse_int(const std::string& key, std::string_view s) {
  s = text::trim(s);
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' is not an integer: " + std::string(s));
  return v;
}

}  // namespace

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  const auto v = get(key);
  return v ? parse_int(key, *v) : fallback;
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& f : text::split(*v, ',')) {
    try {
      out.push_back(text::parse_double(f));
    } catch (const Error&) {
      throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' has a non-numeric entry: " + f);
    }
  }
  return out;
}

std::vector<long long> KeyValueConfig::get_ints(const std::string& key, const std::vector<long long>& fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::vector<long long> out;
  for (const auto& f : text::split(*v, ',')) out.push_back(parse_int(key, f));
  return out;
}

std::vector<std::string> KeyValueConfig::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
  return out;
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace srnr
