#pragma once

#include <filesystem>
#include <string>

#include "zestdiff/probe.hpp"
#include "zestdiff/shapes.hpp"
#include "zestdiff/text.hpp"

namespace zestdiff {

// Segment file: JSON of the form
//   {"segments": [{"mask": "seg0.pgm", "value": 255, "tokens": [1, 2], "text": "red circle"}, ...]}
// Mask paths are relative to the JSON file. A pixel is inside the segment
// when it equals "value" (any non-zero pixel when "value" is absent). Either
// "tokens" (positions in the prompt) or "text" (a word run that must occur in
// the prompt) selects the tokens. Masks must be square with a side that is a
// multiple of `resolution`; they are reduced by area majority.

/// Throws std::invalid_argument on unreadable masks, missing text or token
/// positions outside the prompt.
SegmentSpec load_segment_file(const std::filesystem::path& path, const PromptSpec& prompt, const Vocabulary& vocab,
                              int resolution);

/// Writes `<dir>/segments.json` plus one PGM per object for a rendered scene.
/// Returns the JSON path.
std::filesystem::path write_segment_file(const std::filesystem::path& dir, const Scene& scene);

}  // namespace zestdiff
