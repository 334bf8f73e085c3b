#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace capgen {

// Malformed or inconsistent input data (files, records, ids).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss, reward or gradient during training or evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values; the message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using WarningSink = std::function<void(const std::string&)>;

// Warnings go to stderr unless a sink is installed (tests capture them).
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace capgen
