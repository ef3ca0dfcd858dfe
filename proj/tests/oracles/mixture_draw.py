#!/usr/bin/env python3
# Copyright 2026 The dimt-tools Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Reference reimplementation of the seeded per-segment task draw.

Usage: mixture_draw.py SEED COUNT W_OCR W_MT W_PCOT W_E2E
Prints the realized count for each task kind (all segments feasible).
"""
import sys

MASK = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def main():
    seed, count = int(sys.argv[1]), int(sys.argv[2])
    weights = [float(w) for w in sys.argv[3:7]]
    total = sum(weights)
    norm = [w / total for w in weights]
    feasible_total = 0.0
    for w in norm:
        if w > 0:
            feasible_total += w
    state, counts = seed & MASK, [0, 0, 0, 0]
    for _ in range(count):
        state, z = splitmix64(state)
        target = (z >> 11) * (2.0 ** -53) * feasible_total
        acc, pick = 0.0, None
        for k, w in enumerate(norm):
            if w > 0:
                acc += w
                pick = k
                if target < acc:
                    break
        counts[pick] += 1
    print(" ".join(str(c) for c in counts))


if __name__ == "__main__":
    main()
