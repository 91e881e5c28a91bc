#pragma once

#include <stdexcept>
#include <string>

namespace cracsim {

enum class Errc {
  InvalidArgument,
  OutOfArena,
  DoubleFree,
  UnknownId,
  StreamLimitExceeded,
  BusyStream,
  UnregisteredKernel,
  DuplicateKernelId,
  OutOfRange,
  NotManaged,
  HalfConflict,
  QuiesceTimeout,
  ReplayDivergence,
  ImageCorrupt,
  UnknownKernelBody,
  DivisionByZero,
};

constexpr const char* errc_name(Errc c) {
  switch (c) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::OutOfArena: return "OutOfArena";
    case Errc::DoubleFree: return "DoubleFree";
    case Errc::UnknownId: return "UnknownId";
    case Errc::StreamLimitExceeded: return "StreamLimitExceeded";
    case Errc::BusyStream: return "BusyStream";
    case Errc::UnregisteredKernel: return "UnregisteredKernel";
    case Errc::DuplicateKernelId: return "DuplicateKernelId";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::NotManaged: return "NotManaged";
    case Errc::HalfConflict: return "HalfConflict";
    case Errc::QuiesceTimeout: return "QuiesceTimeout";
    case Errc::ReplayDivergence: return "ReplayDivergence";
    case Errc::ImageCorrupt: return "ImageCorrupt";
    case Errc::UnknownKernelBody: return "UnknownKernelBody";
    case Errc::DivisionByZero: return "DivisionByZero";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace cracsim
