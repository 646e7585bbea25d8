#ifndef UNINET_ERRORS_HPP
#define UNINET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace uninet {

// I/O failures: missing files, unwritable directories, short reads
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structural problems in persisted data: bad magic, version mismatch
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Loaded data that parses but violates a documented invariant
class InvariantError : public std::runtime_error {
public:
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration (task masks, spec fields, flag combinations)
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged or produced non-finite values
class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace uninet

#endif
