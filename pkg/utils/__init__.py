# Utils module for common utilities