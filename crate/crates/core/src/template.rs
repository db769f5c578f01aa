// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

/// A gallery entry: identity label plus feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub identity: String,
    pub vector: Vec<f64>,
}

impl Template {
    pub fn new(identity: impl Into<String>, vector: Vec<f64>) -> Self {
        Template { identity: identity.into(), vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Identity bytes (length-prefixed) followed by the vector as big-endian
    /// IEEE-754 values.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = (self.identity.len() as u64).to_be_bytes().to_vec();
        out.extend(self.identity.as_bytes());
        for x in &self.vector {
            out.extend(x.to_bits().to_be_bytes());
        }
        out
    }
}
