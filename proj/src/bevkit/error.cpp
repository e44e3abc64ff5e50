#include "bevkit/error.hpp"

namespace bevkit {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kPlacement: return "placement error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kMissingInput: return "missing input";
    case ErrorKind::kPropertyFailure: return "property failure";
  }
  return "unknown error";
}

}  // namespace bevkit
