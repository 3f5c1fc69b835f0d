mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape;

