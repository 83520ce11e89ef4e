#pragma once

#include <stdexcept>
#include <string>

namespace mmica {

// Root of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error { using Error::Error; };
class UnsupportedConjugate : public Error { using Error::Error; };
class DimensionMismatch : public Error { using Error::Error; };
class NotPositiveDefinite : public Error { using Error::Error; };
class SingularMatrix : public Error { using Error::Error; };
class DegenerateStats : public Error { using Error::Error; };
class DegenerateRow : public Error { using Error::Error; };
class RankDeficient : public Error { using Error::Error; };
class InvalidConfig : public Error { using Error::Error; };

class Diverged : public Error { using Error::Error; };

class IoError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ChecksumError : public FormatError { using FormatError::FormatError; };

} // namespace mmica
