#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>

#include "wearmil/error.hpp"

namespace wearmil {

// Calendar date with day resolution. Stored as a civil y/m/d triple;
// arithmetic goes through std::chrono::sys_days so day differences are
// exact regardless of month lengths or leap years.
class Date {
 public:
  Date() = default;
  Date(int year, unsigned month, unsigned day)
      : ymd_(std::chrono::year{year}, std::chrono::month{month},
             std::chrono::day{day}) {
    if (!ymd_.ok()) throw Error("invalid calendar date " + to_string());
  }

  // Parses strict ISO-8601 "YYYY-MM-DD".
  static Date parse(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-')
      throw Error("malformed date '" + s + "' (expected YYYY-MM-DD)");
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
      if (s[i] < '0' || s[i] > '9')
        throw Error("malformed date '" + s + "' (expected YYYY-MM-DD)");
    int y = std::stoi(s.substr(0, 4));
    unsigned m = static_cast<unsigned>(std::stoi(s.substr(5, 2)));
    unsigned d = static_cast<unsigned>(std::stoi(s.substr(8, 2)));
    return Date(y, m, d);
  }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u",
                  static_cast<int>(ymd_.year()),
                  static_cast<unsigned>(ymd_.month()),
                  static_cast<unsigned>(ymd_.day()));
    return buf;
  }

  // Signed whole-day difference, this - other.
  long long days_since(const Date& other) const {
    using std::chrono::sys_days;
    return (sys_days(ymd_) - sys_days(other.ymd_)).count();
  }

  Date plus_days(long long n) const {
    using std::chrono::sys_days;
    std::chrono::year_month_day ymd{sys_days(ymd_) + std::chrono::days{n}};
    Date d;
    d.ymd_ = ymd;
    return d;
  }

  auto operator<=>(const Date& other) const {
    return std::chrono::sys_days(ymd_) <=> std::chrono::sys_days(other.ymd_);
  }
  bool operator==(const Date& other) const { return ymd_ == other.ymd_; }

 private:
  std::chrono::year_month_day ymd_{std::chrono::year{1970},
                                   std::chrono::month{1},
                                   std::chrono::day{1}};
};

}  // namespace wearmil
