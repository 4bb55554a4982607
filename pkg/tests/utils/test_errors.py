# -*- coding: UTF-8 -*-
import unittest

from utils.errors import (ConfigError, ContractError, DimensionError, GsmtError, LoadError, NonFiniteError,
                          SpecError, VerificationError)


class TestErrors(unittest.TestCase):

    def test_hierarchy(self):
        for cls in (DimensionError, ConfigError, ContractError, LoadError, SpecError, NonFiniteError,
                    VerificationError):
            self.assertTrue(issubclass(cls, GsmtError), cls.__name__)

    def test_load_error_offset(self):
        error = LoadError("sample.gfv: bad magic", offset=0)
        self.assertEqual(error.offset, 0)
        self.assertEqual(str(error), "sample.gfv: bad magic (byte offset 0)")

    def test_load_error_without_offset(self):
        error = LoadError("manifest missing")
        self.assertIsNone(error.offset)
        self.assertEqual(str(error), "manifest missing")


if __name__ == '__main__':
    unittest.main()
