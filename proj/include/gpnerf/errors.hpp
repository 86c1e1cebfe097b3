#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpnerf {

// Base of everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// geometry
struct NonPositiveDepth : Error { using Error::Error; };
struct PixelOutOfRange : Error { using Error::Error; };
struct BadCamera : Error { using Error::Error; };

// shared numeric plumbing
struct DimensionMismatch : Error { using Error::Error; };
struct InvalidInterval : Error { using Error::Error; };

// sparse volume
struct OutOfGrid : Error {
    OutOfGrid(const std::string& what, std::vector<std::size_t> offending)
        : Error(what), offenders(std::move(offending)) {}
    std::vector<std::size_t> offenders;  // indices of the out-of-bounds vertices
};
struct EmptyVolume : Error { using Error::Error; };

// weight / asset files
struct BadMagic : Error { using Error::Error; };
struct UnsupportedVersion : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct InconsistentDims : Error { using Error::Error; };
struct BadHeader : Error { using Error::Error; };
struct BadDimension : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// scene manifests
struct SchemaError : Error { using Error::Error; };
struct MissingFile : Error { using Error::Error; };

// trainer
struct MissingActivations : Error { using Error::Error; };
struct InsufficientBodyPixels : Error { using Error::Error; };

// metrics / bench
struct TooSmall : Error { using Error::Error; };
struct EquivalenceViolation : Error { using Error::Error; };

}  // namespace gpnerf
