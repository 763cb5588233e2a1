/* Copyright 2026 The ModulePort Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstddef>
#include <functional>

namespace moduleport {

// Worker count from MODULEPORT_THREADS; 1 when unset. Throws ConfigError when
// the variable is set to anything other than a positive integer.
int ThreadsFromEnvironment();

// Runs body(i) for i in [0, n). Indices are split into contiguous chunks, one
// per worker. The first exception thrown by any worker is rethrown.
void ParallelFor(std::size_t n, int threads,
                 const std::function<void(std::size_t)>& body);

}  // namespace moduleport
