#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "priorfill/numerics/params.hpp"

namespace priorfill {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// A directory holding `manifest.json` (metadata and tensor index) and
/// `blob.bin` (raw little-endian tensor bytes in index order).
struct Checkpoint {
    int version = kCheckpointVersion;
    std::string model_kind;
    nlohmann::json config = nlohmann::json::object();
    int64_t step = 0;
    nlohmann::json rng_state = nlohmann::json::object();
    /// Free-form run metadata (optimizer step counts, hashes).
    nlohmann::json extra = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const Tensor& tensor(const std::string& name) const;
};

/// Writes both files through temporaries and renames, blob first. The
/// manifest records the blob's CRC-32, so a torn pair fails to load.
void save_checkpoint(const std::string& dir, const Checkpoint& ck);

/// Reads and fully validates a checkpoint. Throws CheckpointError on a
/// version mismatch, a truncated or corrupted blob, or an index that
/// disagrees with the blob.
Checkpoint load_checkpoint(const std::string& dir);

/// Appends `src` entries to `dst` under `prefix`, deep-copied.
void append_tensors(std::vector<NamedTensor>& dst, const std::string& prefix, const std::vector<NamedTensor>& src);

/// Copies `prefix`-named tensors of `ck` into `targets`. Every target must
/// be present with a matching shape and dtype; nothing is written unless all are.
void restore_tensors(const Checkpoint& ck, const std::string& prefix, const std::vector<NamedTensor>& targets);

}  // namespace priorfill
