#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace pansel {

/// Flat key = value configuration. Every key has a default; unknown keys
/// are rejected with ConfigError.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);
  /// Parses "key = value" lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void set_assignment(const std::string& assignment);

  bool known(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<int> integers(const std::string& key) const;

  /// Every key in canonical order, one "key = value" per line.
  void write(std::ostream& os) const;
  std::string text() const;
  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

}  // namespace pansel
