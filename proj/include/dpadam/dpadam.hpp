// Copyright 2026 The dpadam Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "dpadam/accountant.hpp"
#include "dpadam/autodiff.hpp"
#include "dpadam/config.hpp"
#include "dpadam/dataset.hpp"
#include "dpadam/error.hpp"
#include "dpadam/harness.hpp"
#include "dpadam/model.hpp"
#include "dpadam/optim.hpp"
#include "dpadam/privacy.hpp"
#include "dpadam/random.hpp"
#include "dpadam/tensor.hpp"
