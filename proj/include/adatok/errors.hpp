#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adatok {

// Exit-code families used by the command-line tool.
enum class ErrorKind : int {
  usage = 2,
  format = 3,
  transport = 4,
  empty_result = 5,
};

// Base class of every error thrown by the toolkit. name() is the stable
// identifier printed on stderr by the CLI.
class Error : public std::runtime_error {
 public:
  Error(const char* name, ErrorKind kind, const std::string& what)
      : std::runtime_error(what), name_(name), kind_(kind) {}

  const char* name() const noexcept { return name_; }
  ErrorKind kind() const noexcept { return kind_; }

 private:
  const char* name_;
  ErrorKind kind_;
};

#define ADATOK_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(#Name, Kind, what) {} \
  };

ADATOK_DEFINE_ERROR(InvalidArgument, ErrorKind::usage)
ADATOK_DEFINE_ERROR(FormatError, ErrorKind::format)
ADATOK_DEFINE_ERROR(TruncationError, ErrorKind::format)
ADATOK_DEFINE_ERROR(UnsupportedDtype, ErrorKind::format)
ADATOK_DEFINE_ERROR(IoError, ErrorKind::format)
ADATOK_DEFINE_ERROR(ShapeError, ErrorKind::format)
ADATOK_DEFINE_ERROR(EmptyMaskError, ErrorKind::format)
ADATOK_DEFINE_ERROR(UnsupportedMode, ErrorKind::usage)
ADATOK_DEFINE_ERROR(MissingPrior, ErrorKind::format)
ADATOK_DEFINE_ERROR(EncodingError, ErrorKind::format)
ADATOK_DEFINE_ERROR(TransportError, ErrorKind::transport)
ADATOK_DEFINE_ERROR(AckTimeout, ErrorKind::transport)
ADATOK_DEFINE_ERROR(StartupError, ErrorKind::transport)
ADATOK_DEFINE_ERROR(NoMasksSurvived, ErrorKind::empty_result)

#undef ADATOK_DEFINE_ERROR

// Malformed TOK frame. offset is the byte position where decoding failed.
class FrameError : public Error {
 public:
  FrameError(std::size_t offset, const std::string& what)
      : Error("FrameError", ErrorKind::format,
              what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace adatok
